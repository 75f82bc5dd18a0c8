"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line."""
import itertools
import os
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from pyrabow.classify import (
    KernelSpec,
    gram_matrix,
    kernel_eval,
    logreg_objective,
    predict_knn,
    predict_svm,
    train_knn,
    train_svm,
)
from pyrabow.cli import default_steps, execute
from pyrabow.codebook import Codebook, KMeansConfig, quantize_image, train_codebook
from pyrabow.config import from_dict
from pyrabow.dataset import scan_dataset
from pyrabow.encoding import PyramidSpec, ScalerStats, fit_pca, normalize, project_pca, pyramid_regions
from pyrabow.evaluation import cross_validate, roc_auc
from pyrabow.fisher import train_gmm
from pyrabow.synthetic import make_grating_corpus

FORMULA_TOL = 1e-9
FORMULA_BUDGET_S = 1.0
PYRAMID_BUDGET_S = 1.0
ORACLE_BUDGET_S = 10.0
SVM_BOUNDARY_TOL = 1e-3
SVM_BUDGET_S = 5.0
PSD_FLOOR = -1e-8
PSD_TRIALS = 20
PSD_VECTORS = 50
E2E_MIN_ACCURACY = 0.90
E2E_BUDGET_S = 120.0
SCENE_TOL = 0.05
SCENE_ENV = "PYRABOW_SCENE_CORPUS"


@pytest.fixture
def report(capsys, request):
    lines = []

    def emit(ok, detail):
        tag = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        lines.append(f"[{tag}] {request.node.name}: {detail}")
    yield emit
    with capsys.disabled():
        for line in lines:
            print("\n" + line)


@contextmanager
def stopwatch():
    box = {}
    t0 = time.perf_counter()
    yield box
    box["s"] = time.perf_counter() - t0


def test_criterion_1_formula_exactness(report):
    with stopwatch() as t:
        hi = KernelSpec("hist_intersection")
        x = np.array([0.5, 3.0, 1.25, 0.0])
        stats = ScalerStats(np.array([2.0, 2.0]), np.array([1.0, 1.0]))
        checks = [
            abs(kernel_eval(hi, [1, 2], [2, 1]) - 2.0),
            abs(kernel_eval(hi, x, x) - x.sum()),
            np.abs(normalize([3.0, 4.0], "l2") - [0.6, 0.8]).max(),
            np.abs(normalize([1.0, 3.0], "sum") - [0.25, 0.75]).max(),
            np.abs(normalize([1.0, 3.0], "standard", stats) - [-1.0, 1.0]).max(),
            abs(np.linalg.norm(normalize(np.arange(1.0, 9.0), "l2", block_size=4)[:4]) - 1.0),
            abs(normalize(np.arange(1.0, 9.0), "sum", block_size=4)[4:].sum() - 1.0),
        ]
    err = max(checks)
    ok = err <= FORMULA_TOL and t["s"] < FORMULA_BUDGET_S
    report(ok, f"max error {err:.2e} (tol {FORMULA_TOL}), {t['s']:.3f}s (< {FORMULA_BUDGET_S}s)")
    assert ok


def test_criterion_2_pyramid_counts(report):
    with stopwatch() as t:
        sq = len(pyramid_regions(PyramidSpec("square", 2), 256, 256))
        hz = len(pyramid_regions(PyramidSpec("horizontal", 2), 256, 256))
    ok = sq == 21 and hz == 10 and t["s"] < PYRAMID_BUDGET_S
    report(ok, f"square L2 = {sq} (want 21), horizontal L2 = {hz} (want 10), {t['s']:.3f}s")
    assert ok


def _pair_auc(s, pos):
    P, N = s[pos], s[~pos]
    return sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in P for b in N) / (len(P) * len(N))


def test_criterion_3_oracle_equivalence(report):
    rng = np.random.default_rng(7)
    results = {}
    with stopwatch() as t:
        X = np.zeros((4, 128))
        X[:, 0] = [0.0, 0.1, 10.0, 10.1]
        cb = train_codebook(X, KMeansConfig(k=2, seed=0))
        results["kmeans"] = np.abs(np.sort(cb.centroids[:, 0]) - [0.05, 10.05]).max() <= 1e-9

        C = rng.normal(size=(16, 128))
        D = rng.normal(size=(20, 128))
        brute = [min(range(16), key=lambda j: (np.sum((d - C[j]) ** 2), j)) for d in D]
        results["quantize"] = quantize_image(Codebook(C), D).tolist() == brute

        Xk = rng.normal(size=(20, 4))
        yk = rng.integers(0, 3, 20)
        m = train_knn(Xk, yk, 3)
        ok_knn = True
        for q in rng.normal(size=(10, 4)):
            near = sorted(range(20), key=lambda i: (float(np.sum((Xk[i] - q) ** 2)), i))[:3]
            votes = np.bincount(yk[near], minlength=3)
            ok_knn &= predict_knn(m, q)[0] == int(np.argmax(votes))
        results["knn"] = ok_knn

        s = np.array([0.9, 0.8, 0.8, 0.4, 0.3, 0.8])
        tr = np.array([1, 0, 1, 1, 0, 0])
        results["auc"] = abs(roc_auc(s, tr, 1)[1] - _pair_auc(s, tr == 1)) <= 1e-12

        Xp = rng.normal(size=(20, 6))
        pm = fit_pca(Xp, 3)
        rec = project_pca(pm, Xp) @ pm.components + pm.mean
        ev = np.sort(np.linalg.eigvalsh(np.cov(Xp, rowvar=False)))[::-1]
        results["pca"] = abs(np.sum((Xp - rec) ** 2) - ev[3:].sum() * 19) <= 1e-8

        Xl = rng.normal(size=(6, 4))
        Y = np.eye(3)[rng.integers(0, 3, 6)]
        W, b = rng.normal(size=(3, 4)), rng.normal(size=3)
        _, gW, _ = logreg_objective(W, b, Xl, Y, 0.1)
        ok_fd = True
        for idx in itertools.product(range(3), range(4)):
            Wp, Wm = W.copy(), W.copy()
            Wp[idx] += 1e-6
            Wm[idx] -= 1e-6
            fd = (logreg_objective(Wp, b, Xl, Y, 0.1)[0] - logreg_objective(Wm, b, Xl, Y, 0.1)[0]) / 2e-6
            ok_fd &= abs(fd - gW[idx]) <= 1e-5 * max(abs(gW[idx]), 1e-4)
        results["logreg_grad"] = ok_fd
    ok = all(results.values()) and t["s"] < ORACLE_BUDGET_S
    bad = [k for k, v in results.items() if not v]
    report(ok, f"{len(results) - len(bad)}/{len(results)} oracles match {bad or ''}, "
               f"{t['s']:.2f}s (< {ORACLE_BUDGET_S}s)")
    assert ok


def _dual_ok(model, n):
    return all(np.all(np.abs(row) <= model.C * (1 + 1e-9))
               and abs(row.sum()) <= 1e-8 * max(1.0, model.C * n) for row in model.dual_coef)


def test_criterion_4_svm_correctness(report):
    xor = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    yx = np.array([0, 0, 1, 1])
    with stopwatch() as t:
        two = train_svm(np.array([[-1.0], [1.0]]), np.array([0, 1]), KernelSpec("linear"), C=10.0)
        boundary = abs(two.decision_function([0.0])[1])
        rbf = train_svm(xor, yx, KernelSpec("rbf"), C=10.0)
        acc = float(np.mean(predict_svm(rbf, xor)[0] == yx))
        feasible = _dual_ok(two, 2) and _dual_ok(rbf, 4)
    ok = boundary <= SVM_BOUNDARY_TOL and acc == 1.0 and feasible and t["s"] < SVM_BUDGET_S
    report(ok, f"2-point boundary |f(0)| = {boundary:.1e} (tol {SVM_BOUNDARY_TOL}), XOR rbf acc {acc}, "
               f"dual feasible {feasible}, {t['s']:.2f}s (< {SVM_BUDGET_S}s)")
    assert ok


def test_criterion_5_kernel_psd(report):
    worst = np.inf
    for seed in range(PSD_TRIALS):
        X = np.random.default_rng(seed).random((PSD_VECTORS, 32))
        worst = min(worst, np.linalg.eigvalsh(gram_matrix(KernelSpec("hist_intersection"), X)).min())
    ok = worst >= PSD_FLOOR
    report(ok, f"min eigenvalue over {PSD_TRIALS} trials = {worst:.3e} (floor {PSD_FLOOR})")
    assert ok


def test_criterion_6_monotonicity(report):
    runs = 0
    worst_km = worst_em = 0.0
    for seed in range(6):
        rng = np.random.default_rng(seed)
        X = np.vstack([rng.normal(c, 1.0, size=(120, 8)) for c in range(0, 20, 4)])
        cb = train_codebook(X, KMeansConfig(k=6, seed=seed, tol=0.0, max_iter=40))
        g = train_gmm(X, 4, max_iter=40, tol=0.0, seed=seed)
        worst_km = max(worst_km, float(np.max(np.diff(cb.history), initial=0.0)))
        worst_em = min(worst_em, float(np.min(np.diff(g.log_likelihood), initial=0.0)))
        runs += 2
    # both trainers also assert monotonicity inline at every iteration
    ok = worst_km <= 1e-12 * cb.history[0] and worst_em >= -1e-9 * abs(g.log_likelihood[0])
    report(ok, f"{runs} runs; largest k-means rise {worst_km:.1e}, largest EM drop {-worst_em:.1e}")
    assert ok


@pytest.fixture(scope="module")
def e2e_corpus(tmp_path_factory):
    return make_grating_corpus(tmp_path_factory.mktemp("e2e") / "corpus", per_class=60, size=64,
                               noise=0.1, seed=0, angles=(0.0, 45.0, 90.0))


def _e2e_run(root, out):
    cfg = from_dict({"dataset": {"root": str(root), "train_fraction": 0.7},
                     "codebook": {"k": 128},
                     "encoding": {"shape": "horizontal", "level": 1, "normalization": "standard"},
                     "classifier": {"kind": "svm", "kernel": {"kind": "rbf"}}})
    t0 = time.perf_counter()
    ctx = execute(cfg, out, default_steps(cfg), threads=1)
    return ctx.results["evaluate"]["accuracy"], time.perf_counter() - t0


def test_criterion_7_end_to_end_synthetic(report, e2e_corpus, tmp_path, monkeypatch):
    monkeypatch.setenv("PYRABOW_CACHE_DIR", str(tmp_path / "cache"))
    acc, secs = _e2e_run(e2e_corpus, tmp_path / "run")
    ok = acc >= E2E_MIN_ACCURACY and secs < E2E_BUDGET_S
    report(ok, f"held-out accuracy {acc:.4f} (>= {E2E_MIN_ACCURACY}), {secs:.1f}s (< {E2E_BUDGET_S:.0f}s)")
    assert ok


def test_criterion_8_scene_corpus(report):
    root = os.environ.get(SCENE_ENV)
    if not root or not Path(root).is_dir():
        report(None, f"set {SCENE_ENV} to the 8-class scene corpus to run")
        pytest.skip(f"{SCENE_ENV} not set")
    index = scan_dataset(root)

    def cv(**over):
        base = {"dataset": {"root": root}, "eval": {"protocol": "cv", "folds": 8}}
        for k, v in over.items():
            base.setdefault(k, {}).update(v)
        return cross_validate(from_dict(base), index).mean

    l1 = cv(codebook={"k": 512})
    l0 = cv(codebook={"k": 512}, encoding={"level": 0})
    k32 = cv(codebook={"k": 32})
    pca = cv(codebook={"k": 512}, pca={"enabled": True, "num_components": 64})
    kern = {k: cv(codebook={"k": 512}, classifier={"kernel": {"kind": k}})
            for k in ("rbf", "sigmoid", "linear", "poly")}
    kern["hist_intersection"] = cv(codebook={"k": 512}, encoding={"normalization": "l2"},
                                   classifier={"kernel": {"kind": "hist_intersection"}})
    hard = l1 >= l0 and l1 >= k32
    soft = {"horizontal L1": (l1, 0.84), "codebook 512": (l1, 0.85), "pca 64": (pca, 0.87)}
    soft_ok = all(abs(v - target) <= SCENE_TOL for v, target in soft.values())
    order_ok = kern["rbf"] >= kern["sigmoid"] >= kern["hist_intersection"] >= max(kern["linear"], kern["poly"]) - SCENE_TOL
    report(hard, f"trend L1 {l1:.3f} >= L0 {l0:.3f}, k512 >= k32 {k32:.3f}: {hard}; "
                 f"soft targets within {SCENE_TOL}: {soft_ok}; kernel order: {order_ok}")
    assert hard


def test_criterion_9_determinism(report, e2e_corpus, tmp_path, monkeypatch):
    # separate descriptor caches so the second run re-extracts everything
    for run in ("a", "b"):
        monkeypatch.setenv("PYRABOW_CACHE_DIR", str(tmp_path / f"cache_{run}"))
        _e2e_run(e2e_corpus, tmp_path / run)
    names = sorted(p.name for p in (tmp_path / "a" / "metrics").glob("*.csv"))
    same = [(tmp_path / "a" / "metrics" / n).read_bytes() == (tmp_path / "b" / "metrics" / n).read_bytes()
            for n in names]
    ok = bool(names) and all(same)
    report(ok, f"{sum(same)}/{len(names)} metrics CSVs byte-identical across two runs")
    assert ok
