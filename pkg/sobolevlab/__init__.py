"""
sobolevlab: P1 finite element approximation of the critical Sobolev
constant on the unit ball, with the extremal family, stability
functionals and verification checks used to study its convergence rate.
"""

from sobolevlab.errors import SobolevLabError
from sobolevlab.experiments import run_convergence, run_lemma_suite
from sobolevlab.extremals import ExtremalField, ExtremalParams, radial_profile, sobolev_constant_ref
from sobolevlab.mesh import Mesh, build_ball_mesh
from sobolevlab.solver import SolveResult, solve_Sh

__version__ = '0.1.0'

__all__ = [
    'ExtremalField',
    'ExtremalParams',
    'Mesh',
    'SobolevLabError',
    'SolveResult',
    'build_ball_mesh',
    'radial_profile',
    'run_convergence',
    'run_lemma_suite',
    'sobolev_constant_ref',
    'solve_Sh',
]
