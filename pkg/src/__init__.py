"""
Eigenstate Learnability Lab package.
This package contains modules for building spin-chain Hamiltonians, exact
diagonalization, eigenstate diagnostics, and training an encoder that infers
couplings from eigenstates with a physics-informed loss.
"""

__version__ = '0.1.0'
