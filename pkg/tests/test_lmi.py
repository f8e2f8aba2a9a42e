import json

import numpy as np
import pytest

from homobs import design as ds
from homobs import lmi
from homobs.errors import LmiInfeasibleError, LmiProblemError


def scalar_lyapunov(a=-1.0):
    return lmi.LmiProblem(
        variables=[lmi.Variable("p", (1, 1), True)],
        blocks=[lmi.Block("decay", lambda v: 2 * a * v["p"], lmi.NSD),
                lmi.Block("pos", lambda v: v["p"], lmi.PD)],
        normalize=("p",),
    )


def test_scalar_lyapunov():
    prob = scalar_lyapunov()
    cert = lmi.solve_feasibility(prob)
    assert cert.values["p"][0, 0] > 0
    assert lmi.verify_certificate(prob, cert).passed


def test_contradictory_blocks_report():
    prob = lmi.LmiProblem(
        variables=[lmi.Variable("x", (1, 1), True)],
        blocks=[lmi.Block("neg", lambda v: v["x"] @ np.eye(1) * 1.0, lmi.NSD),
                lmi.Block("pos", lambda v: v["x"], lmi.PD)],
    )
    with pytest.raises(LmiInfeasibleError) as info:
        lmi.solve_feasibility(prob)
    assert hasattr(info.value, "report")


def test_problem_errors():
    with pytest.raises(LmiProblemError):
        lmi.LmiProblem([lmi.Variable("P", (2, 2), True)],
                       [lmi.Block("b", lambda v: v["P"], lmi.NSD)])
    with pytest.raises(LmiProblemError):
        lmi.LmiProblem([lmi.Variable("P", (2, 2), True)],
                       [lmi.Block("b", lambda v: v["P"] @ np.ones((3, 3)), lmi.PD)])


def test_double_integrator_prescribed_lmi(di):
    h = ds.solve_homogenization(di.A, di.C)
    G = ds.generator_prescribed(h.G0, -0.5, h.n_tilde)
    prob = ds.lmi_problem(h.A0, di.C, G, 1.0)
    cert = lmi.solve_feasibility(prob)
    P, Y = cert.values["P"], cert.values["Y"]
    W = P @ h.A0 + h.A0.T @ P + Y @ di.C + di.C.T @ Y.T + (P @ G + G.T @ P)
    assert np.linalg.eigvalsh(W).max() <= 0
    assert lmi.verify_certificate(prob, cert).passed


def test_verify_rejects_zero(di):
    h = ds.solve_homogenization(di.A, di.C)
    prob = ds.lmi_problem(h.A0, di.C, ds.generator_prescribed(h.G0, -0.5, 2), 1.0)
    cert = lmi.LmiCertificate({"P": np.zeros((2, 2)), "Y": np.zeros((2, 1))}, {})
    rep = lmi.verify_certificate(prob, cert)
    assert not rep.passed
    assert any(f.startswith("P:") for f in rep.failures)


def test_verify_detects_tampered_margins(di_design):
    prob = di_design.lmi_problem()
    cert = lmi.LmiCertificate(dict(di_design.certificate.values),
                              {k: v + 1e-3 for k, v in di_design.certificate.margins.items()})
    assert not lmi.verify_certificate(prob, cert).passed


def test_scale_neutrality(di_design):
    prob = di_design.lmi_problem()
    base = di_design.certificate
    for c in (0.5, 3.0, 40.0):
        vals = {k: c * v for k, v in base.values.items()}
        margins = {k: c * m for k, m in base.margins.items()}
        cert = lmi.LmiCertificate(vals, margins)
        rep = lmi.verify_certificate(prob, cert, pd_margin=min(1e-6, c * 1e-6))
        assert rep.passed, rep.failures


def test_determinism(di):
    h = ds.solve_homogenization(di.A, di.C)
    G = ds.generator_filtering(h.G0, -1 / 3, 2)
    Gb, Ab, Cb = ds.build_extended(h.A0, di.C, G)
    a = lmi.solve_feasibility(ds.lmi_problem(Ab, Cb, Gb, 1.0))
    b = lmi.solve_feasibility(ds.lmi_problem(Ab, Cb, Gb, 1.0))
    for k in a.values:
        assert np.array_equal(a.values[k], b.values[k])


def test_json_dump_round_trip(di_design):
    prob = di_design.lmi_problem()
    doc = json.loads(lmi.dump_json(prob, di_design.certificate))
    cert = lmi.LmiCertificate.from_dict(doc["certificate"])
    assert lmi.verify_certificate(prob, cert).passed
    # rebuilding each block from its affine expansion reproduces the evaluated block
    vals = cert.values
    for name, blk in doc["blocks"].items():
        M = np.array(blk["constant"])
        for c in blk["coefficients"]:
            M = M + vals[c["variable"]][tuple(c["index"])] * np.array(c["matrix"])
        assert np.allclose(M, doc["evaluated"][name], atol=1e-9)
