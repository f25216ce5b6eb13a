"""TASEP on rooted Galton-Watson trees fed by a root reservoir.

Modules: ``tree`` (lazy GW trees), ``rates`` (rate families, flows),
``bounds`` (closed-form windows), ``engine`` (simulation), ``couplings``,
``lpp``, ``equilibrium`` and ``cli``.
"""
__version__ = "0.1.0"
