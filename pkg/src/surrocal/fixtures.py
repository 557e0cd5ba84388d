"""Published emulator parameter tables, kept as printed decimal strings.

Rows are used as serialization fixtures for the EmulatorFit schema, not as
fit targets.  ``s`` columns are latitude (``kernel_Z``); ``t`` columns are
time for surface and pressure for upper air (``kernel_T``).
"""

from __future__ import annotations

from surrocal.data import OCEAN, SURFACE, UPPER_AIR
from surrocal.kernels import KernelSpec

# power exponential model
TABLE1 = {
    SURFACE: {"mu": "0.217", "eta_1": "1.365", "p_1": "0.425", "eta_2": "1.189", "p_2": "0.273",
              "eta_3": "2.283", "p_3": "0.903", "eta_t": "1.227", "p_t": "1.147",
              "eta_s": "1.255", "p_s": "1.501", "sigma2": "0.024", "omega2": "0.016"},
    UPPER_AIR: {"mu": "-0.047", "eta_1": "1.206", "p_1": "0.302", "eta_2": "1.031", "p_2": "0.185",
                "eta_3": "1.274", "p_3": "0.390", "eta_t": "14.476", "p_t": "1.849",
                "eta_s": "4.382", "p_s": "1.431", "sigma2": "0.007", "omega2": "0.004"},
    OCEAN: {"mu": "0.001", "eta_1": "3.430", "p_1": "1.999", "eta_2": "21.636", "p_2": "1.999",
            "eta_3": "1.545", "p_3": "1.927", "sigma2": "2e-6", "omega2": "7e-9"},
}

# Matern model; omega2 and the ocean row are shared with the power exponential table
TABLE2 = {
    SURFACE: {"mu": "0.211", "eta_1": "1.399", "p_1": "0.426", "eta_2": "1.239", "p_2": "0.267",
              "eta_3": "2.287", "p_3": "0.908", "alpha_t": "3.987", "alpha_s": "2.682",
              "sigma2": "0.022", "omega2": "0.016"},
    UPPER_AIR: {"mu": "-0.021", "eta_1": "1.142", "p_1": "0.323", "eta_2": "0.963", "p_2": "0.193",
                "eta_3": "1.171", "p_3": "0.376", "alpha_t": "6.873", "alpha_s": "12.244",
                "sigma2": "0.006", "omega2": "0.004"},
    OCEAN: TABLE1[OCEAN],
}


def row_params(dataset: str, row: dict):
    """Build :class:`EmulatorParams` from one table row of decimal strings."""
    from surrocal.emulator import EmulatorParams

    v = {k: float(s) for k, s in row.items()}
    kth = KernelSpec.powexp([v["eta_1"], v["eta_2"], v["eta_3"]], [v["p_1"], v["p_2"], v["p_3"]])
    kz = kt = None
    if "eta_s" in v:
        kz = KernelSpec.powexp([v["eta_s"]], [v["p_s"]])
        kt = KernelSpec.powexp([v["eta_t"]], [v["p_t"]])
    elif "alpha_s" in v:
        kz = KernelSpec.matern([v["alpha_s"]])
        kt = KernelSpec.matern([v["alpha_t"]])
    return EmulatorParams(dataset, v["mu"], v["sigma2"], v["omega2"], kth, kz, kt)


def params_row(params) -> dict:
    """Inverse of :func:`row_params`, as floats keyed by column name."""
    k = params.kernel_theta
    row = {"mu": params.mu, "sigma2": params.sigma2, "omega2": params.omega2}
    for i in range(3):
        row[f"eta_{i + 1}"] = k.eta[i]
        row[f"p_{i + 1}"] = k.p[i]
    for axis, spec in (("s", params.kernel_z), ("t", params.kernel_t)):
        if spec is None:
            continue
        if spec.family == "matern_3_2":
            row[f"alpha_{axis}"] = spec.alpha[0]
        else:
            row[f"eta_{axis}"] = spec.eta[0]
            row[f"p_{axis}"] = spec.p[0]
    return row


def table_params(table: int = 1) -> dict:
    rows = {1: TABLE1, 2: TABLE2}[table]
    return {name: row_params(name, row) for name, row in rows.items()}
