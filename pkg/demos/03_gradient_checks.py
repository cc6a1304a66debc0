"""
Checking the gradients
======================

Every primitive of the autodiff engine, then every trainable array of a
tiny end-to-end model, against central finite differences in 64-bit mode.
"""
from orca_swh.gradcheck import check_pipeline, check_primitives, format_report

print(format_report(check_primitives()))
print()
results = check_pipeline(samples=48)
print(format_report(results))

# A corrupted analytic gradient is caught and named.
bad = [r.name for r in check_pipeline(corrupt="loc.w3") if not r.passed]
print("\nwith loc.w3 corrupted, failing:", bad)
