"""Acceptance criteria, one test per criterion.

Each test prints a PASS/FAIL line and records it for the terminal summary.
The training criteria are slow (about half an hour in total on one core);
deselect them with ``-m "not slow"``.
"""
import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from crlc.config import RunConfig, comparable
from crlc.critics import CriticConfig, critic_dot, critic_log_dot
from crlc.data import gen_mixture
from crlc.gradcheck import check_pc_gradients, rel_error
from crlc.losses import LossWeights, saturation_gradient, smooth, softmax
from crlc.metrics import ari, clustering_accuracy, nmi
from crlc.model import TwoHeadModel
from crlc.pipeline import crlc_step, mine_neighbors, train_end_to_end, train_semi, train_two_stage

import conftest
from test_metrics import brute_acc, brute_ari, partitions
from test_model import SMALL, reference_crlc

# reduced budget for the multi-run comparisons: default model, 30 epochs
DESK = dict(epochs=30, eval_every=30)
SEEDS = range(5)

_REPORTS = []   # every training report produced here, for the InfoNCE check
_CACHE = {}


def verdict(capsys, n, ok, detail):
    conftest.ACCEPTANCE[n] = (bool(ok), detail)
    with capsys.disabled():
        print(f"\ncriterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def trained(kind, **cfg):
    config = RunConfig(**cfg)
    key = (kind, json.dumps(config.to_dict(), sort_keys=True))
    if key not in _CACHE:
        fn = {"e2e": train_end_to_end, "semi": train_semi, "two": train_two_stage}[kind]
        rep = fn(config)
        _REPORTS.append(rep)
        _CACHE[key] = rep
    return _CACHE[key]


def test_c01_gradient_oracle(capsys):
    t = time.perf_counter()
    worst = check_pc_gradients(trials=100, seed=0)
    dt = time.perf_counter() - t
    verdict(capsys, 1, worst <= 1e-4 and dt < 10,
            f"max rel error {worst:.2e} over 100 instances in {dt:.2f}s")


def test_c02_end_to_end_gradient(capsys):
    rng = np.random.default_rng(2)
    model = TwoHeadModel(SMALL, seed=11)
    v1, v2 = rng.normal(size=(2, 8, SMALL.input_dim))
    critic, weights = CriticConfig(), LossWeights(1.0, 10.0)
    crlc_step(model, v1, v2, critic, weights)
    names = list(model.params)
    analytic, numeric = [], []
    for _ in range(20):
        name = names[rng.integers(len(names))]
        w = model.params[name]
        i = int(rng.integers(w.size))
        old = w.flat[i]
        w.flat[i] = old + 1e-5
        fp = reference_crlc(model, v1, v2, critic, weights)
        w.flat[i] = old - 1e-5
        fm = reference_crlc(model, v1, v2, critic, weights)
        w.flat[i] = old
        analytic.append(model.grads[name].flat[i])
        numeric.append((fp - fm) / 2e-5)
    err = rel_error(analytic, numeric)
    verdict(capsys, 2, err <= 1e-4, f"rel error {err:.2e} on 20 parameters")


def test_c03_saturation(capsys):
    q, p = [0.0, 1.0, 0.0], [0.998, 0.001, 0.001]
    g0 = saturation_gradient(q, p, gamma=0.0)
    g1 = saturation_gradient(q, p, gamma=0.01)
    # descent on the loss -log(q.p) moves the logits along +g
    qs = smooth(q, 0.01)
    stepped = softmax(np.log(qs) + 0.5 * g1)
    ok = np.max(np.abs(g0)) <= 1e-12 and np.max(np.abs(g1)) > 0 and stepped[0] > qs[0]
    verdict(capsys, 3, ok, f"|g| at gamma=0: {np.max(np.abs(g0)):.1e}; gamma=0.01: g={np.round(g1, 5)}, "
                          f"mass on class 1 {qs[0]:.4f} -> {stepped[0]:.4f}")


def test_c04_critic_grid(capsys):
    grid = np.round(np.arange(0, 101) / 100, 2)
    P = np.stack([grid, 1 - grid], axis=1)
    dots = P @ P.T
    with np.errstate(divide="ignore"):
        logs = np.log(dots)
    corners = {0, 100}
    arg_max = {(int(i), int(j)) for i, j in zip(*np.nonzero(dots == dots.max()))}
    arg_min = {(int(i), int(j)) for i, j in zip(*np.nonzero(dots == dots.min()))}
    log_max = {(int(i), int(j)) for i, j in zip(*np.nonzero(logs == logs.max()))}
    ok = (dots.max() == 1.0 and arg_max == {(0, 0), (100, 100)}
          and dots.min() == 0.0 and arg_min == {(0, 100), (100, 0)}
          and logs.max() == 0.0 and log_max == {(0, 0), (100, 100)}
          and {i for i, _ in arg_max} <= corners)
    # the library critics agree with the grid at the extremes
    ok = ok and critic_dot(P[0], P[0]) == 1.0 and critic_log_dot(P[100], P[100]) == 0.0
    verdict(capsys, 4, ok, f"{len(grid) ** 2} grid pairs; dot max at {sorted(arg_max)}, "
                          f"min at {sorted(arg_min)}; log-dot max at {sorted(log_max)}")


def test_c06_metric_oracles(capsys):
    checked = 0
    ok = True
    for n in range(1, 7):
        parts = list(partitions(n))
        for p in parts:
            for t in parts:
                ok &= abs(clustering_accuracy(p, t) - brute_acc(p, t)) <= 1e-12
                if n >= 2:
                    ok &= abs(ari(p, t) - brute_ari(p, t)) <= 1e-12
                checked += 1
    ok &= nmi([0, 1, 1, 2], [0, 1, 1, 2]) == 1.0
    ok &= nmi([0, 1, 0, 1], [0, 0, 1, 1]) == 0.0
    verdict(capsys, 6, ok, f"{checked} partition pairs checked; NMI hand cases exact")


@pytest.mark.slow
def test_c07_synthetic_regression(capsys):
    rep = trained("e2e")
    m = rep.final_metrics
    floor = 0.5 * math.log(4)
    h_min = min(r["entropy"] for r in rep.per_epoch if r["epoch"] > 10)
    ok = m["acc"] >= 0.95 and m["nmi"] >= 0.85 and h_min >= floor
    verdict(capsys, 7, ok, f"ACC {m['acc']:.4f} NMI {m['nmi']:.4f}; min entropy after epoch 10 "
                          f"{h_min:.4f} (floor {floor:.4f}); {rep.runtime_s:.0f}s")


@pytest.mark.slow
def test_c08_critic_ablation(capsys):
    acc = {k: [trained("e2e", critic=k, seed=s, **DESK).final_metrics["acc"] for s in SEEDS]
           for k in ("LogDot", "Dot", "NegJS")}
    mean = {k: float(np.mean(v)) for k, v in acc.items()}
    ok = mean["LogDot"] >= mean["Dot"] and mean["LogDot"] >= mean["NegJS"]
    verdict(capsys, 8, ok, "mean ACC over 5 seeds: " + ", ".join(f"{k} {v:.4f}" for k, v in mean.items()))


@pytest.mark.slow
def test_c09_lambda2_ablation(capsys):
    def converged_pc(lam):
        vals = []
        for s in range(3):
            rep = trained("e2e", lambda2=lam, seed=s, **DESK)
            vals.append(np.mean([r["loss_pc"] for r in rep.per_epoch[-5:]]))
        return float(np.mean(vals))

    with_fc, without = converged_pc(10.0), converged_pc(0.0)
    verdict(capsys, 9, with_fc <= without,
            f"converged L_PC: lambda2=10 -> {with_fc:.4f}, lambda2=0 -> {without:.4f}")


@pytest.mark.slow
def test_c10_two_stage(capsys):
    rep = trained("two")
    acc = rep.final_metrics["acc"]

    ds = gen_mixture(4, 16, 500, 6.0, seed=0)
    noise = np.random.default_rng(0).normal(size=ds.features.shape)
    oracle = ds.means[ds.labels] + 0.05 * noise
    oracle /= np.linalg.norm(oracle, axis=1, keepdims=True)
    nb = mine_neighbors(oracle, 50)
    pure = bool(np.all(ds.labels[nb] == ds.labels[:, None]))
    verdict(capsys, 10, acc >= 0.9 and pure,
            f"two-stage ACC {acc:.4f}; learned-feature neighbor purity "
            f"{rep.extra['neighbor_purity']:.4f}; oracle neighbors all same-cluster: {pure}")


def _cli(args, tmp_path, name):
    out = tmp_path / name
    subprocess.run([sys.executable, "-m", "crlc.cli", *args, "--out", str(out)],
                   check=True, capture_output=True)
    return out.read_bytes()


def test_c11_determinism(capsys, tmp_path):
    cfg = {
        "dataset": {"kind": "mixture", "C": 3, "D": 6, "n_per_class": 30, "separation": 5.0, "seed": 0},
        "backbone": [16], "feature_dim": 8, "rl_hidden": 16, "head_hidden": 16, "n_subheads": 2,
        "batch_size": 30, "epochs": 3, "stage1_epochs": 2, "n_neighbors": 4, "labeled_batch": 3,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    base = ["--config", str(cfg_path), "--seed", "3"]
    data = tmp_path / "data.csv"
    model = tmp_path / "m.bin"
    subprocess.run([sys.executable, "-m", "crlc.cli", "gen-data", "--C", "3", "--D", "6",
                    "--n-per-class", "30", "--out", str(data)], check=True)
    subprocess.run([sys.executable, "-m", "crlc.cli", "train", *base, "--save-model", str(model),
                    "--out", str(tmp_path / "ignored.json")], check=True)
    commands = {
        "train": ["train", *base, "--reproducible"],
        "two-stage": ["two-stage", *base, "--reproducible"],
        "semi": ["semi", *base, "--reproducible"],
        "ablate": ["ablate", *base, "--reproducible", "--axis", "Critic", "--values", "LogDot,NegL2"],
        "gen-data": ["gen-data", "--C", "3", "--D", "4", "--n-per-class", "5", "--seed", "3"],
        "mine-neighbors": ["mine-neighbors", "--data", str(data), "-k", "4"],
        "eval": ["eval", "--checkpoint", str(model), "--data", str(data)],
    }
    same = {}
    for name, args in commands.items():
        same[name] = _cli(args, tmp_path, f"{name}.a") == _cli(args, tmp_path, f"{name}.b")
    # without --reproducible only the wall-clock fields may differ
    a = json.loads(_cli(["train", *base], tmp_path, "plain.a"))
    b = json.loads(_cli(["train", *base], tmp_path, "plain.b"))
    same["train (timestamped)"] = comparable(a) == comparable(b)
    # grad-check reports on stdout
    gc = [subprocess.run([sys.executable, "-m", "crlc.cli", "grad-check", "--trials", "10", "--seed", "3"],
                         check=True, capture_output=True).stdout for _ in range(2)]
    same["grad-check"] = gc[0] == gc[1]
    bad = [k for k, v in same.items() if not v]
    verdict(capsys, 11, not bad, f"{len(same)} commands byte-identical" if not bad else f"differ: {bad}")


@pytest.mark.slow
def test_c12_semi_supervised(capsys):
    semi = [trained("semi", seed=s, **DESK).final_metrics["acc"] for s in SEEDS]
    unsup = [trained("e2e", critic="LogDot", seed=s, **DESK).final_metrics["acc"] for s in SEEDS]
    s_mean, s_std = float(np.mean(semi)), float(np.std(semi))
    u_mean, u_std = float(np.mean(unsup)), float(np.std(unsup))
    ok = s_std <= u_std and s_mean >= u_mean
    verdict(capsys, 12, ok, f"semi ACC {np.round(semi, 4).tolist()} mean {s_mean:.4f} std {s_std:.4f}; "
                           f"unsupervised mean {u_mean:.4f} std {u_std:.4f}")


def test_c05_infonce_bound_all_runs(capsys):
    # checks every run produced above, so it is placed last
    if not _REPORTS:
        _REPORTS.append(train_end_to_end(RunConfig(**{**DESK, "epochs": 3})))
    n_epochs, worst = 0, -math.inf
    for rep in _REPORTS:
        M = rep.config["batch_size"]
        for r in rep.per_epoch:
            for loss, est in (("loss_pc", "infonce_pc"), ("loss_fc", "infonce_fc")):
                if r.get(loss) is None:
                    continue
                n_epochs += 1
                worst = max(worst, r[est] - math.log(M))
    verdict(capsys, 5, worst <= 0.0,
            f"{n_epochs} epoch records from {len(_REPORTS)} runs; max(estimate - log M) = {worst:.4f}")
