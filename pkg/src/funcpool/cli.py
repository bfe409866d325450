"""Command-line entry point: ``funcpool <subcommand> ...``.

Exit codes: 0 success, 2 usage, 3 data or format error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import CONFIG_ENV, load_config
from .conservation import balance_pseudo_dataset, read_labels_tsv, write_labels_tsv
from .embed import read_store, synth_embed, write_store
from .errors import DataError, FuncpoolError, NumericalError
from .evalkit import (
    EvalProtein,
    OrthologSpec,
    Pipeline,
    SyntheticEmbedder,
    format_saliency_tsv,
    robustness_suite,
    saliency,
)
from .fixtures import FixtureParams, make_fixture, write_fixture
from .rng import Rng
from .runner import (
    evaluate_labels,
    evaluate_residues,
    format_predictions_tsv,
    parse_scores_tsv,
    pool_store,
    predict_store,
    pseudo_label_dir,
    read_known_classes,
    run_pipeline,
    score_store,
    stage2_samples,
)
from .selfcheck import TOLERANCE, run_check
from .seqio import BUILTIN_TAGS, TagSpec, apply_tag, read_fasta, simulate_ortholog, write_fasta
from .stage1 import ResidueClassifier, format_scores_tsv, train_stage1
from .stage2 import ECClassifier, read_ec_tsv, train_stage2

log = logging.getLogger("funcpool")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


def _write_text(path: str | Path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


def _functional_map(path: str | None) -> dict[str, tuple[int, ...]]:
    if path is None:
        return {}
    return {ls.protein_id: tuple(int(i) for i in ls.positives()) for ls in read_labels_tsv(path)}


def _first_column(path: str) -> list[str]:
    """Distinct first-column values of a TSV (or one id per line), in file order."""
    ids: dict[str, None] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip() and not line.startswith("#"):
            ids.setdefault(line.split("\t", 1)[0].strip(), None)
    return list(ids)


# -- subcommands -------------------------------------------------------------


def cmd_make_fixtures(args) -> int:
    params = FixtureParams(
        n_proteins=args.proteins,
        n_classes=args.classes,
        seed=args.seed,
        dim=args.dim,
        signal=args.signal,
        msa_rows=args.msa_rows,
        withhold_class=args.withhold,
    )
    paths = write_fixture(make_fixture(params), args.out)
    for key, path in paths.items():
        print(f"{key}\t{path}")
    return EXIT_OK


def cmd_embed_synth(args) -> int:
    seqs = read_fasta(args.input)
    functional = _functional_map(args.functional)
    write_store(
        [synth_embed(s, args.dim, args.seed, functional.get(s.id, ()), args.signal) for s in seqs], args.out, args.dim
    )
    return EXIT_OK


def cmd_pseudo_label(args) -> int:
    write_labels_tsv(pseudo_label_dir(args.msa, args.fraction), args.out)
    return EXIT_OK


def cmd_train_stage1(args) -> int:
    config = load_config(args.config)
    store = read_store(args.embeddings)
    sup = read_labels_tsv(args.sup)
    msa = balance_pseudo_dataset(read_labels_tsv(args.msa), config.stream("pseudo/balance")) if args.msa else []
    model, trace = train_stage1(config.stage1, store, sup, msa)
    model.save(args.out)
    if trace:
        log.info("stage1 final loss %.6f", trace[-1])
    return EXIT_OK


def cmd_score(args) -> int:
    model = ResidueClassifier.load(args.model)
    _write_text(args.out, format_scores_tsv(score_store(model, read_store(args.embeddings))))
    return EXIT_OK


def cmd_pool(args) -> int:
    model = ResidueClassifier.load(args.model)
    write_store(pool_store(model, read_store(args.embeddings), args.keep, args.fixed_k), args.out)
    return EXIT_OK


def cmd_train_stage2(args) -> int:
    config = load_config(args.config)
    samples = stage2_samples(read_store(args.pooled), read_ec_tsv(args.labels))
    model, trace = train_stage2(config.stage2, samples)
    model.save(args.out)
    if trace:
        log.info("stage2 final loss %.6f", trace[-1])
    return EXIT_OK


def cmd_predict(args) -> int:
    model = ECClassifier.load(args.model)
    known = read_known_classes(args.known_classes) if args.known_classes else None
    ids = _first_column(args.ids) if args.ids else None
    _write_text(args.out, format_predictions_tsv(predict_store(model, read_store(args.pooled), known, ids)))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if args.residue:
        truth = read_labels_tsv(args.truth)
        scores = parse_scores_tsv(Path(args.pred).read_text(encoding="utf-8"))
        result = evaluate_residues(scores, truth, args.threshold)
        text = json.dumps(result, indent=2, sort_keys=True) + "\n"
        print(f"precision {result['precision']:.4f}  recall {result['recall']:.4f}  f1 {result['f1']:.4f}")
    else:
        report = evaluate_labels(read_ec_tsv(args.pred), read_ec_tsv(args.truth), args.averaging, args.level)
        text = report.to_json()
        print(report.to_text(), end="")
    if args.out:
        _write_text(args.out, text)
    return EXIT_OK


def cmd_augment(args) -> int:
    seqs = read_fasta(args.input)
    if (args.tag is None) == (args.ortholog is None):
        raise DataError("give exactly one of --tag or --ortholog")
    if args.tag is not None:
        residues = args.residues or BUILTIN_TAGS.get(args.tag)
        if residues is None:
            raise DataError(f"tag {args.tag!r} is not built in; pass --residues")
        tag = TagSpec(args.tag, residues, args.terminus)
        out = [apply_tag(s, tag) for s in seqs]
    else:
        protect = _functional_map(args.protect)
        rng = Rng(args.seed)
        out = [
            simulate_ortholog(s, args.ortholog, rng.child(f"ortholog/{s.id}"), protect.get(s.id, ()))
            for s in seqs
        ]
    write_fasta(out, args.out)
    return EXIT_OK


def cmd_robustness(args) -> int:
    config = load_config(args.config)
    stage1 = ResidueClassifier.load(config.path("stage1"))
    stage2 = ECClassifier.load(config.path("stage2"))
    seqs = {s.id: s for s in read_fasta(config.path("sequences"))}
    truth = read_ec_tsv(config.path("truth"))
    functional = _functional_map(config.paths.get("functional"))
    missing = [pid for pid in truth if pid not in seqs]
    if missing:
        raise DataError(f"truth proteins missing from the sequence file: {', '.join(missing[:5])}")
    test_set = [EvalProtein(seqs[pid], frozenset(labs), functional.get(pid, ())) for pid, labs in truth.items()]
    emb = config.embedding
    known = frozenset(read_known_classes(config.path("known_classes"))) if "known_classes" in config.paths else None
    pipe = Pipeline(stage1, stage2, SyntheticEmbedder(emb.dim, emb.seed, emb.signal), config.keep_fraction, known=known)
    augs = list(config.tags) + [OrthologSpec(config.ortholog_identity)]
    report = robustness_suite(pipe, test_set, augs, config.stream("robustness"), args.averaging, args.level)
    print(report.to_text(), end="")
    _write_text(args.out, report.to_json())
    return EXIT_OK


def cmd_saliency(args) -> int:
    stage1 = ResidueClassifier.load(args.stage1)
    stage2 = ECClassifier.load(args.stage2)
    store = read_store(args.embeddings)
    ids = args.ids.split(",") if args.ids else store.ids()
    maps = [
        saliency(stage1, stage2, store.lookup(pid), args.keep, args.fixed_k, args.mode, args.frozen_scores)
        for pid in ids
    ]
    _write_text(args.out, format_saliency_tsv(maps))
    return EXIT_OK


def cmd_grad_check(args) -> int:
    spec: object = args.spec
    if args.spec not in ("stage1", "stage2"):
        path = Path(args.spec)
        try:
            spec = json.loads(path.read_text(encoding="utf-8")) if path.exists() else json.loads(args.spec)
        except json.JSONDecodeError as exc:
            raise DataError(f"grad-check spec is neither a preset nor valid JSON ({exc})") from None
    result = run_check(spec, args.seed)
    ok = result.max_rel_error < TOLERANCE
    print(f"max_rel_error {result.max_rel_error:.3e} over {result.n_checked} coordinates: {'ok' if ok else 'FAILED'}")
    return EXIT_OK if ok else EXIT_NUMERICAL


def cmd_run(args) -> int:
    config = load_config(args.config)
    result = run_pipeline(config, args.fixture, args.out)
    rep = result.report
    if "stage1" in rep:
        print(f"stage1 held-out residue F1 {rep['stage1']['f1']:.4f}")
    print(f"stage2 macro F1 {rep['stage2']['f1']:.4f}")
    if "merged" in rep:
        print(f"merged-head macro F1 {rep['merged']['f1']:.4f}")
    for name, seconds in result.timings.items():
        log.info("%s took %.1f s", name, seconds)
    return EXIT_OK


def cmd_show_config(args) -> int:
    print(load_config(args.config).to_json(), end="")
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="funcpool", description="Function-aware EC-number annotation pipeline.")
    p.add_argument("-q", "--quiet", action="store_true", help="only print errors to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    config_help = f"JSON config (default: ${CONFIG_ENV}, then built-in defaults)"

    s = sub.add_parser("make-fixtures", help="write a synthetic dataset with planted functional residues")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--proteins", type=int, default=200)
    s.add_argument("--classes", type=int, default=8)
    s.add_argument("--dim", type=int, default=32)
    s.add_argument("--signal", type=float, default=4.0)
    s.add_argument("--msa-rows", type=int, default=50)
    s.add_argument("--withhold", type=int, default=None, help="class index whose 4th digit is hidden in training")
    s.set_defaults(func=cmd_make_fixtures)

    s = sub.add_parser("embed-synth", help="embed a FASTA file with the synthetic embedder")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--dim", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--signal", type=float, default=0.0)
    s.add_argument("--functional", help="residue-label TSV whose positives receive the signal")
    s.set_defaults(func=cmd_embed_synth)

    s = sub.add_parser("pseudo-label", help="label the lowest-entropy columns of each MSA")
    s.add_argument("--msa", required=True, help="directory of aligned FASTA/A2M files")
    s.add_argument("--fraction", type=float, default=0.10)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pseudo_label)

    s = sub.add_parser("train-stage1", help="train the functional-residue classifier")
    s.add_argument("--config", help=config_help)
    s.add_argument("--embeddings", required=True)
    s.add_argument("--sup", required=True, help="curated residue-label TSV")
    s.add_argument("--msa", help="pseudo-label TSV (balanced before training)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_stage1)

    s = sub.add_parser("score", help="per-residue functional probabilities")
    s.add_argument("--model", required=True)
    s.add_argument("--embeddings", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("pool", help="function-aware pooled protein vectors")
    s.add_argument("--model", required=True)
    s.add_argument("--embeddings", required=True)
    s.add_argument("--keep", type=float, default=0.2)
    s.add_argument("--fixed-k", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pool)

    s = sub.add_parser("train-stage2", help="train the EC classifier on pooled vectors")
    s.add_argument("--config", help=config_help)
    s.add_argument("--pooled", required=True)
    s.add_argument("--labels", required=True, help="EC label TSV")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_stage2)

    s = sub.add_parser("predict", help="top-1 EC prediction per protein")
    s.add_argument("--model", required=True)
    s.add_argument("--pooled", required=True)
    s.add_argument("--known-classes", help="known 4-digit classes; enables the merged 3/4-digit head")
    s.add_argument("--ids", help="only predict proteins listed in the first column of this file")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", help="precision/recall/F1 of predictions against truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--averaging", choices=("macro", "micro", "weighted"), default="macro")
    s.add_argument("--level", type=int, choices=(3, 4), default=4)
    s.add_argument("--residue", action="store_true", help="score TSV against residue-label TSV")
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("augment", help="tag or ortholog-mutate sequences")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--tag")
    s.add_argument("--residues", help="residues of a custom tag")
    s.add_argument("--terminus", choices=("N", "C"), default="N")
    s.add_argument("--ortholog", type=float, help="target sequence identity")
    s.add_argument("--protect", help="residue-label TSV of positions to keep unchanged")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("robustness", help="F1 sensitivity to tags and orthologs")
    s.add_argument("--config", help=config_help)
    s.add_argument("--averaging", choices=("macro", "micro", "weighted"), default="macro")
    s.add_argument("--level", type=int, choices=(3, 4), default=4)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_robustness)

    s = sub.add_parser("saliency", help="per-residue gradient attributions")
    s.add_argument("--stage1", required=True)
    s.add_argument("--stage2", required=True)
    s.add_argument("--embeddings", required=True)
    s.add_argument("--keep", type=float, default=0.2)
    s.add_argument("--fixed-k", type=int, default=None)
    s.add_argument("--mode", choices=("weighted", "mean"), default="weighted")
    s.add_argument("--frozen-scores", action="store_true")
    s.add_argument("--ids", help="comma-separated protein ids (default: all)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_saliency)

    s = sub.add_parser("grad-check", help="finite-difference check of the analytic gradients")
    s.add_argument("--spec", default="stage2", help="'stage1', 'stage2', or a JSON layer spec (file or string)")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_grad_check)

    s = sub.add_parser("run", help="full pipeline on a fixture directory")
    s.add_argument("--config", help=config_help)
    s.add_argument("--fixture", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("show-config", help="print the effective configuration")
    s.add_argument("--config", help=config_help)
    s.set_defaults(func=cmd_show_config)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s", stream=sys.stderr
    )
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"funcpool: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FuncpoolError, OSError, UnicodeDecodeError) as exc:
        print(f"funcpool: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
