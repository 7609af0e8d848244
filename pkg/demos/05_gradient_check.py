"""
Checking every gradient against finite differences
==================================================

Each analytic gradient in the library is compared with a central
difference of the scalar it differentiates.
"""

from ecan.gradcheck import run_suite

worst = run_suite(instances=5, seed=0)
for name, err in worst.items():
    print(f"{name:>16}: max relative error {err:.2e}")
