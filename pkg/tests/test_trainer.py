import math

import numpy as np
import pytest

from ustrun import segnet
from ustrun.losses import lambda_schedule, total_loss
from ustrun.synthdata import generate_dataset
from ustrun.trainer import (FLAGS, ROWS, TrainConfig, evaluate, infer, parse_config_text, run_ablation,
                            telemetry_csv, train, write_outputs)


@pytest.fixture(scope="module")
def tiny():
    return generate_dataset(seed=0, n_labeled=4, n_unlabeled_per_domain=4, n_test_per_domain=2, size=16)


def cfg(row, **kw):
    base = dict(t_total=6, eval_every=3, labeled_batch=2, unlabeled_batch=2, seed=1)
    return TrainConfig.for_row(row, **{**base, **kw})


@pytest.mark.parametrize("bad", [dict(ucp=True, sym_gd=True, vanilla_gd=True), dict(ucp=True, ram=True, tp_ram=True),
                                 dict(sym_gd=True), dict(reliable=True), dict(unreliable=True), dict(t_total=0)])
def test_invalid_configs_refused(bad, tiny):
    c = TrainConfig(**bad)
    with pytest.raises(ValueError):
        c.validate()
    with pytest.raises(ValueError):
        train(c, tiny)


def test_rows_are_valid():
    for row in ROWS:
        TrainConfig.for_row(row).validate()
    assert TrainConfig.for_row("row1").flags() == ("ucp",)
    assert set(TrainConfig.for_row("row8").flags()) == {"ucp", "sym_gd", "tp_ram", "reliable", "unreliable"}


def test_parse_config_text():
    text = "# comment\nt_total = 50\nucp = true\nrect_area = 0.1 0.2\ntau=0.9  # trailing\n"
    d = parse_config_text(text)
    assert d == dict(t_total=50, ucp=True, rect_area=(0.1, 0.2), tau=0.9)
    with pytest.raises(KeyError):
        parse_config_text("nope = 1")
    with pytest.raises(ValueError):
        parse_config_text("ucp = maybe")


def test_supervised_has_no_unlabeled_terms(tiny):
    res = train(cfg("supervised"), tiny)
    for tr in res.traces:
        assert tr.losses.l_in == tr.losses.l_out == tr.losses.l_sym == 0.0
        assert tr.admitted == 0 and tr.queue_size == 0 and tr.unreliable_id == -1


def test_fixmatch_uses_one_term(tiny):
    res = train(cfg("fixmatch"), tiny)
    assert all(tr.losses.l_in == 0.0 and tr.losses.l_sym == 0.0 for tr in res.traces)


def test_total_uses_lambda_squared(tiny):
    res = train(cfg("row3"), tiny)
    for tr in res.traces:
        b = tr.losses
        lam = lambda_schedule(tr.iter, 6)
        assert b.lambda_t == lam
        assert math.isclose(b.l_total, b.l_s + lam * (b.l_in + b.l_out + lam * b.l_sym), rel_tol=1e-12)
    unit = total_loss(1.0, 1.0, 1.0, 1.0, 0.5)
    assert unit.l_total == 1 + 0.5 * (2 + 0.5)


def test_unreliable_uses_previous_pick(tiny):
    res = train(cfg("row8"), tiny)
    assert res.traces[0].unreliable_id == -1
    assert all(tr.unreliable_id >= 0 for tr in res.traces[1:])
    assert all(tr.queue_size <= 20 and tr.gamma >= 0.05 for tr in res.traces)


def test_tp_ram_rho_bounded_by_progress(tiny):
    res = train(cfg("row6", t_total=10), tiny)
    assert res.traces[0].rho == 0.0
    for tr in res.traces:
        assert 0 <= tr.rho <= tr.iter / 10


def test_determinism(tiny, tmp_path):
    a = write_outputs(train(cfg("row8"), tiny), tmp_path / "a")
    b = write_outputs(train(cfg("row8"), tiny), tmp_path / "b")
    for name in ("student.segn", "teacher.segn", "best.segn", "telemetry.csv", "reliability.csv", "evals.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    c = train(cfg("row8", seed=2), tiny)
    assert telemetry_csv(c) != (a / "telemetry.csv").read_text()


def test_telemetry_header_lists_defaults(tiny):
    text = telemetry_csv(train(cfg("row1", t_total=2), tiny))
    header = [l for l in text.splitlines() if l.startswith("#")]
    assert "# tau=0.95" in header and "# capacity=20" in header and "# delta=1.0005" in header
    assert len(header) == len(TrainConfig.__dataclass_fields__)


def test_infer_and_checkpoint(tiny, tmp_path):
    res = train(cfg("row1", t_total=3), tiny)
    img = tiny.test[0].image
    first = infer(res.student, img)
    assert np.array_equal(first, infer(res.student, img)) and first.shape == img.shape[1:]
    segnet.save_checkpoint(tmp_path / "s.segn", res.student)
    loaded = segnet.load_checkpoint(tmp_path / "s.segn")
    assert all(loaded[k].tobytes() == res.student[k].tobytes() for k in res.student)
    assert np.array_equal(infer(loaded, img), first)


def test_uniform_checkpoint_predicts_background(tiny):
    params = segnet.init_params(1, 2, rng=0)       # last layer zero -> uniform output
    assert not infer(params, tiny.test[0].image).any()


def test_evaluate_report(tiny):
    rep = evaluate(segnet.init_params(1, 2, rng=0), tiny.test, 2)
    assert rep.mean_dc() == 0.0
    assert {r["domain"] for r in rep.rows()} == {0, 1, 2, 3, "all"}


def test_run_ablation_rows(tiny):
    base = TrainConfig(t_total=2, eval_every=0, labeled_batch=2, unlabeled_batch=2)
    out = run_ablation(base, ["row1", "row6"], [1, 2], lambda s: tiny)
    assert [r["row"] for r in out] == ["row1", "row6"]
    assert all(len(r["dc"]) == 2 and r["std"] >= 0 for r in out)


def test_flag_list_complete():
    assert set(FLAGS) == {f for row in ROWS.values() for f in row} | {"ram"}
