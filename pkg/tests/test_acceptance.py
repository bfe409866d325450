"""Acceptance criteria, one test each; every test records a PASS/FAIL line."""

import json
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from funcpool.cli import main
from funcpool.conservation import (
    ColumnDistribution,
    ResidueLabelSet,
    column_entropy,
    entropy_profile,
    evaluate_policy,
    pseudo_label,
)
from funcpool.embed import EmbeddingMatrix, read_store
from funcpool.evalkit import EvalProtein, Pipeline, SyntheticEmbedder, robustness_suite, saliency, sensitivity
from funcpool.fixtures import FixtureParams, class_label, make_fixture
from funcpool.nn import Network
from funcpool.nn.losses import label_smooth, one_hot, smoothed_ce_loss
from funcpool.rng import Rng
from funcpool.runner import evaluate_labels
from funcpool.selfcheck import run_check
from funcpool.seqio import AMINO_ACIDS, AlignedFamily, builtin_tag
from funcpool.stage1 import ResidueClassifier, residue_layers, stage1_loss
from funcpool.stage2 import (
    ECClassifier,
    ECLabel,
    Stage2Config,
    build_training_data,
    class_weights,
    mix_batch,
    pool,
    read_ec_tsv,
    selection_size,
    stage2_loss,
)

E2E_CONFIG = {
    "seed": 0,
    "stage1": {"iterations": 2000, "lr": 1e-3},
    "stage2": {"iterations": 2000, "lr": 1e-3, "batch_size": 256, "hidden": 128},
}


def record(number: int, name: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def run_cli(*argv) -> None:
    assert main(["-q", *map(str, argv)]) == 0


@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    """200 proteins, 8 classes, signal 4.0, 2000 + 2000 iterations, through the CLI."""
    root = tmp_path_factory.mktemp("e2e")
    cfg = root / "config.json"
    cfg.write_text(json.dumps(E2E_CONFIG))
    t0 = time.perf_counter()
    run_cli("make-fixtures", "--out", root / "fixture", "--proteins", 200, "--classes", 8, "--signal", 4.0)
    run_cli("run", "--config", cfg, "--fixture", root / "fixture", "--out", root / "run")
    elapsed = time.perf_counter() - t0
    report = json.loads((root / "run" / "report.json").read_text())
    return root, report, elapsed


# -- 1 -----------------------------------------------------------------------


def test_01_entropy_exactness():
    t0 = time.perf_counter()
    conserved = column_entropy(ColumnDistribution(one_hot(np.array([3]), 20)[0]))
    uniform = column_entropy(ColumnDistribution(np.full(20, 1 / 20)))
    half = np.zeros(20)
    half[[0, 7]] = 0.5
    coin = column_entropy(ColumnDistribution(half))
    # the same columns built from an actual alignment
    fam = AlignedFamily(
        tuple(f"s{i}" for i in range(40)),
        tuple("A" + AMINO_ACIDS[i % 20] + "CD"[i % 2] for i in range(40)),
    )
    prof = entropy_profile(fam).values
    elapsed = time.perf_counter() - t0
    ok = (
        conserved == 0.0
        and prof[0] == 0.0
        and abs(uniform - math.log(20)) < 1e-12
        and abs(prof[1] - math.log(20)) < 1e-12
        and abs(coin - math.log(2)) < 1e-12
        and abs(prof[2] - math.log(2)) < 1e-12
        and elapsed < 1.0
    )
    record(1, "entropy exactness", ok,
           f"H(conserved)={conserved!r}, |H(uniform)-ln20|={abs(uniform - math.log(20)):.1e}, "
           f"|H(50/50)-ln2|={abs(coin - math.log(2)):.1e}, {elapsed:.3f} s")


# -- 2 -----------------------------------------------------------------------


def planted_family(rng: Rng, length: int, rows: int, noise: float):
    """10% fully conserved columns; every other column cycles the 20 amino acids."""
    conserved = np.sort(rng.sample_without_replacement(length, length // 10))
    cols = []
    for j in range(length):
        if j in set(conserved.tolist()):
            col = [AMINO_ACIDS[rng.randint(20)]] * rows
        else:
            col = [AMINO_ACIDS[i % 20] for i in range(rows)]
            col = [col[i] for i in rng.permutation(rows)]
        n_flip = int(round(noise * rows))
        for r in rng.sample_without_replacement(rows, n_flip) if n_flip else []:
            others = [a for a in AMINO_ACIDS if a != col[r]]
            col[r] = others[rng.randint(19)]
        cols.append(col)
    seqs = tuple("".join(col[r] for col in cols) for r in range(rows))
    truth = np.zeros(length, dtype=np.int8)
    truth[conserved] = 1
    return AlignedFamily(tuple(f"r{r}" for r in range(rows)), seqs), truth


def policy_on_planted(noise: float, seed: int):
    rng = Rng(seed)
    pseudo, truth = [], []
    for f in range(20):
        fam, y = planted_family(rng.child(f"family/{f}"), 10 * (6 + f), 50, noise)
        ls = pseudo_label(entropy_profile(fam))
        pseudo.append(ResidueLabelSet(f"f{f}", ls.labels, "pseudo"))
        truth.append(ResidueLabelSet(f"f{f}", y))
    return evaluate_policy(pseudo, truth)


def test_02_pseudo_label_policy_on_planted_msas():
    t0 = time.perf_counter()
    clean = policy_on_planted(0.0, 21)
    noisy = policy_on_planted(0.10, 22)
    elapsed = time.perf_counter() - t0
    ok = clean.precision == 1.0 and clean.recall == 1.0 and noisy.recall >= 0.9 and elapsed < 10.0
    record(2, "pseudo-label policy", ok,
           f"clean P={clean.precision} R={clean.recall}, 10% noise R={noisy.recall:.3f}, {elapsed:.2f} s")


# -- 3 -----------------------------------------------------------------------


def test_03_gradient_fidelity():
    t0 = time.perf_counter()
    errs = {name: run_check(name).max_rel_error for name in ("stage1", "stage2")}
    bad = {name: run_check(name, corrupt=1.01).max_rel_error for name in ("stage1", "stage2")}
    elapsed = time.perf_counter() - t0
    ok = all(e < 1e-4 for e in errs.values()) and all(e > 1e-3 for e in bad.values()) and elapsed < 30.0
    record(3, "gradient fidelity", ok,
           "max rel err " + ", ".join(f"{k}={v:.1e}" for k, v in errs.items())
           + "; corrupted " + ", ".join(f"{k}={v:.1e}" for k, v in bad.items()) + f"; {elapsed:.2f} s")


# -- 4 -----------------------------------------------------------------------


def test_04_confidence_gate():
    batches, removed, kept = 0, 0, 0
    ok = True
    for seed in range(120):
        rng = Rng(seed).child("gate")
        dim = 6
        net = Network(residue_layers(dim, 10)).init(rng.child("init"))
        net.params = [p * 3.0 for p in net.params]
        draw = lambda *s: (2 * rng.random(int(np.prod(s))) - 1).reshape(s) * 2  # noqa: E731
        sx, sy = draw(5, dim), (rng.random(5) < 0.5).astype(float)
        mx, my = draw(16, dim), (rng.random(16) < 0.5).astype(float)
        f = net(mx)[:, 0]
        out = np.flatnonzero(np.maximum(f, 1 - f) <= 0.9)
        full = stage1_loss(net, sx, sy, mx, my, 1.0, 0.9).grads
        for i in out:
            keep = np.arange(16) != i
            pruned = stage1_loss(net, sx, sy, mx[keep], my[keep], 1.0, 0.9).grads
            ok &= all(np.array_equal(a, b) for a, b in zip(full, pruned))
        batches += 1
        removed += len(out)
        kept += 16 - len(out)
    ok &= removed > 0 and kept > 0
    record(4, "confidence gate", ok,
           f"{batches} batches, {removed} gated-out removals, every gradient coordinate unchanged exactly")


# -- 5 -----------------------------------------------------------------------


def test_05_pooling_algebra(e2e):
    root, _, _ = e2e
    rng = Rng(55)
    # (a) permutation invariance with distinct scores
    perm_ok = True
    for t in range(50):
        n = 5 + rng.randint(40)
        x = (2 * rng.random(n * 12) - 1).reshape(n, 12)
        s = rng.random(n)
        p = rng.permutation(n)
        a = pool(EmbeddingMatrix("p", x), s, 0.3).vector
        b = pool(EmbeddingMatrix("p", x[p]), s[p], 0.3).vector
        perm_ok &= a.tobytes() == b.tobytes()
    # (b) uniform scores with keep = 1
    unif_err = 0.0
    for t in range(50):
        n = 1 + rng.randint(60)
        x = (2 * rng.random(n * 12) - 1).reshape(n, 12)
        c = rng.uniform()
        v = pool(EmbeddingMatrix("p", x), np.full(n, c), 1.0).vector
        unif_err = max(unif_err, float(np.abs(v - c * x.mean(axis=0)).max()))
    # (c) appended low scorers
    mono_ok = True
    for t in range(50):
        n, k = 10 + rng.randint(30), 1 + rng.randint(5)
        x = (2 * rng.random((n + 7) * 8) - 1).reshape(n + 7, 8)
        s = rng.random(n + 7)
        kth = np.sort(s[:n])[::-1][max(k, selection_size(n, 0.2)) - 1]
        s[n:] = kth * rng.random(7) * 0.999
        base, grown = EmbeddingMatrix("p", x[:n]), EmbeddingMatrix("p", x)
        a, b = pool(base, s[:n], fixed_k=k), pool(grown, s, fixed_k=k)
        mono_ok &= a.vector.tobytes() == b.vector.tobytes() and np.array_equal(a.selected, b.selected)
        ka, kb = pool(base, s[:n], 0.2), pool(grown, s, 0.2)
        mono_ok &= set(ka.selected.tolist()) <= set(kb.selected.tolist())
    # fixed_k sensitivity to a C-terminal tag, through the trained pipeline
    s1 = ResidueClassifier.load(root / "run" / "stage1.ckpt")
    s2 = ECClassifier.load(root / "run" / "stage2.ckpt")
    fx = make_fixture(FixtureParams())
    emb = SyntheticEmbedder(32, 0, 4.0)
    test = [EvalProtein(q.seq, frozenset([q.ec]), q.functional) for q in fx.split("test")]
    rep = robustness_suite(Pipeline(s1, s2, emb, fixed_k=4), test, [builtin_tag("hsv", "C")], Rng(0))
    sens = rep.sensitivity[0].sensitivity
    ok = perm_ok and unif_err < 1e-12 and mono_ok and sens == 0.0
    record(5, "pooling algebra", ok,
           f"permutation bit-exact={perm_ok}, uniform-score err={unif_err:.1e}, "
           f"appended low scorers keep selection={mono_ok}, fixed_k tag sensitivity={sens!r}%")


# -- 6 -----------------------------------------------------------------------


def blob_samples(seed=6, n_classes=4, per=12, dim=8):
    rng = Rng(seed)
    centres = (2 * rng.random(n_classes * dim) - 1).reshape(n_classes, dim) * 3
    out = []
    for c in range(n_classes):
        for _ in range(per):
            out.append((centres[c] + 0.3 * (2 * rng.random(dim) - 1), ECLabel((1, 1, 1 + c // 2, 1 + c))))
    return out


def test_06_loss_reductions():
    rng = Rng(66)
    # smoothed CE with phi = 1 and eps = 0 against a scalar plain-CE oracle
    ce_err = 0.0
    for _ in range(20):
        b, n = 1 + rng.randint(10), 2 + rng.randint(8)
        logits = (2 * rng.random(b * n) - 1).reshape(b, n) * 5
        y = rng.integers(n, b)
        got, _ = smoothed_ce_loss(logits, label_smooth(one_hot(y, n), 0.0), np.ones(n))
        ref = 0.0
        for r in range(b):
            row = [float(v) for v in logits[r]]
            m = max(row)
            ref += -(row[y[r]] - m - math.log(sum(math.exp(v - m) for v in row)))
        ce_err = max(ce_err, abs(got - ref / b))
    # mixup with lambda = 1 reproduces batch A
    data = build_training_data(blob_samples())
    cfg = Stage2Config(hidden=16, batch_size=8, label_smoothing=0.0, seed=1)
    model = ECClassifier.initial(8, data.vocab4, data.vocab3, np.ones(len(data.vocab4)), cfg)
    a, b_ = rng.integers(len(data.x), 8), rng.integers(len(data.x), 8)
    t4 = one_hot(data.y4, len(data.vocab4))
    t3 = one_hot(data.y3, len(data.vocab3))
    m = np.ones(len(data.x))
    x, mt4, mt3, w4 = mix_batch(data.x[a], t4[a], m[a], t3[a], data.x[b_], t4[b_], m[b_], t3[b_], 1.0)
    mixed, g_mixed = stage2_loss(model, x, mt4, mt3, w4)
    plain, g_plain = stage2_loss(model, data.x[a], t4[a], t3[a])
    mix_ok = mixed == plain and all(p.tobytes() == q.tobytes() for p, q in zip(g_mixed, g_plain))
    # class weights with uniform counts
    vocab = [ECLabel((1, 1, 1, i)) for i in range(1, 6)]
    phi = class_weights([lab for lab in vocab for _ in range(7)], vocab)
    phi_ok = bool(np.all(phi == 1.0))
    ok = ce_err < 1e-12 and mix_ok and phi_ok
    record(6, "loss reductions", ok,
           f"|smoothed CE - plain CE|={ce_err:.1e}, mixup lambda=1 bit-exact={mix_ok}, uniform phi={phi_ok}")


# -- 7 -----------------------------------------------------------------------


def test_07_end_to_end_synthetic_pipeline(e2e):
    _, report, elapsed = e2e
    res_f1, ec_f1 = report["stage1"]["f1"], report["stage2"]["f1"]
    ok = res_f1 >= 0.9 and ec_f1 >= 0.9 and elapsed < 300.0
    record(7, "end-to-end pipeline", ok,
           f"held-out residue F1={res_f1:.4f}, EC macro F1={ec_f1:.4f}, wall time {elapsed:.1f} s")


# -- 8 -----------------------------------------------------------------------


def test_08_ood_merged_head(tmp_path_factory):
    root = tmp_path_factory.mktemp("ood")
    cfg = root / "config.json"
    cfg.write_text(json.dumps(E2E_CONFIG))
    run_cli("make-fixtures", "--out", root / "fixture", "--withhold", 7)
    run_cli("run", "--config", cfg, "--fixture", root / "fixture", "--out", root / "run")
    truth = read_ec_tsv(root / "fixture" / "ec.test.tsv")
    pred = {line.split("\t")[0]: ECLabel.parse(line.split("\t")[1])
            for line in (root / "run" / "predictions.tsv").read_text().splitlines()}
    merged = {line.split("\t")[0]: ECLabel.parse(line.split("\t")[1])
              for line in (root / "run" / "predictions.merged.tsv").read_text().splitlines()}
    withheld_label = class_label(7, 8)
    withheld = [pid for pid, labs in truth.items() if labs == [withheld_label]]
    hits = sum(merged[pid] == withheld_label.prefix3 for pid in withheld)
    frac = hits / len(withheld)

    ind = {pid: labs for pid, labs in truth.items() if pid not in set(withheld)}
    f_plain = evaluate_labels({p: {pred[p]} for p in ind}, ind).f1
    f_merged = evaluate_labels({p: {merged[p]} for p in ind}, ind).f1
    drop = (f_plain - f_merged) / f_plain
    ok = frac >= 0.8 and drop < 0.05
    record(8, "OOD merged head", ok,
           f"{hits}/{len(withheld)} withheld-class proteins get {withheld_label.prefix3} ({frac:.0%}); "
           f"in-distribution macro F1 {f_plain:.4f} -> {f_merged:.4f} (relative drop {drop:.2%})")


# -- 9 -----------------------------------------------------------------------


def test_09_sensitivity_arithmetic():
    s = sensitivity(0.497, 0.302)
    ok = round(s, 1) == 39.2 and round(s) == 39
    record(9, "sensitivity arithmetic", ok, f"sensitivity(0.497, 0.302) = {s:.4f}% (reported 39%)")


# -- 10 ----------------------------------------------------------------------


def test_10_saliency_uniformity(e2e):
    root, _, _ = e2e
    s1 = ResidueClassifier.load(root / "run" / "stage1.ckpt")
    s2 = ECClassifier.load(root / "run" / "stage2.ckpt")
    store = read_store(root / "fixture" / "embeddings.sleb")
    spread = 0.0
    for m in list(store)[:40]:
        v = saliency(s1, s2, m, mode="mean").values
        spread = max(spread, float(v.max() - v.min()))
    ok = spread <= 1e-10
    record(10, "saliency uniformity", ok, f"max attribution spread under mean pooling {spread:.1e} over 40 proteins")


# -- 11 ----------------------------------------------------------------------


def test_11_determinism(e2e, tmp_path_factory):
    root, _, _ = e2e
    cfg = root / "det.json"
    small = {**E2E_CONFIG, "stage1": {"iterations": 200, "lr": 1e-3},
             "stage2": {"iterations": 200, "lr": 1e-3, "batch_size": 256, "hidden": 128}}
    cfg.write_text(json.dumps(small))
    outs = []
    for name in ("a", "b"):
        out = tmp_path_factory.mktemp(f"det_{name}")
        run_cli("run", "--config", cfg, "--fixture", root / "fixture", "--out", out)
        outs.append(out)
    files = sorted(p.name for p in outs[0].iterdir())
    same = [f for f in files if (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()]
    ok = files == sorted(p.name for p in outs[1].iterdir()) and same == files and "report.json" in files
    record(11, "determinism", ok, f"{len(same)}/{len(files)} output files byte-identical ({', '.join(files)})")
