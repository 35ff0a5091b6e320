"""
relq: quasi-optimal (Blanchard-Kahn) and commitment rules for linear-quadratic rational
expectations policy problems.

The main entry points:

* `relq.model.load_model()` reads and validates a JSON model file,
* `relq.bk_solver.solve_bk()` and `solve_quasi_optimal()` for the quasi-optimal rules,
* `relq.commitment.solve_commitment()` for the optimal commitment rule,
* `relq.analysis` for simulations and the identification and covariance experiments,
* `relq.report.build_analysis_report()` for the full pipeline behind ``relq analyze``.
"""
