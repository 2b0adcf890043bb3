"""Command-line pipeline: masks, train, translate, evaluate, split, compare.

Every run writes a manifest (key=value lines, including the exact argv) next
to its outputs; `scenemt rerun <manifest>` replays a run, optionally into a
different output directory, and must reproduce the outputs byte for byte.

Exit codes: 0 success, 2 usage/config error, 3 input or parse error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import shlex
import sys
from pathlib import Path

from . import __version__, autodiff, masks as masks_mod, metrics, semgraph, model as model_mod
from .errors import (
    ConfigError,
    DimensionError,
    NumericError,
    ParseError,
    SceneMtError,
    StructuralError,
)
from .masks import Alignment, MaskSpec
from .model import DecodeConfig, HeadSpec, ModelConfig, TrainConfig
from .semgraph import extract_scenes, parse_cover_file, parse_ucca_file, sem_split
from .textpipe import Vocab

SCENE_FAMILIES = ("binary", "scaled", "normal")


# -- small file helpers -------------------------------------------------------


def _read_text(path):
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc


def _parse_file(path, parser):
    """Parse file content, prefixing structural/parse errors with the path."""
    try:
        return parser(_read_text(path))
    except (ParseError, StructuralError) as exc:
        raise type(exc)(f"{path}: {exc}") from exc


def _read_sentences(path):
    return [line.split() for line in _read_text(path).splitlines()]


def _read_alignments(path, n_expected):
    aligns = []
    for lineno, line in enumerate(_read_text(path).splitlines(), start=1):
        if not line.strip():
            continue
        try:
            counts = [int(x) for x in line.split()]
        except ValueError as exc:
            raise ParseError("alignment counts must be integers", line=lineno) from exc
        aligns.append(Alignment.from_counts(counts))
    if len(aligns) != n_expected:
        raise DimensionError(
            f"{len(aligns)} alignment lines for {n_expected} sentences"
        )
    return aligns


def _load_covers(args, n_expected=None):
    if args.cover and args.ucca:
        raise ConfigError("--cover and --ucca are mutually exclusive")
    if args.cover:
        covers = _parse_file(args.cover, parse_cover_file)
    elif args.ucca:
        covers = _parse_file(
            args.ucca,
            lambda text: [extract_scenes(g) for g in parse_ucca_file(text)],
        )
    else:
        raise ConfigError("scene-mask families need --cover or --ucca input")
    if n_expected is not None and len(covers) != n_expected:
        raise DimensionError(f"{len(covers)} covers for {n_expected} sentences")
    return covers


def _load_trees(args, n_expected=None):
    if not args.conllu:
        raise ConfigError("dependency-mask families need --conllu input")
    trees = _parse_file(args.conllu, semgraph.parse_conllu)
    if n_expected is not None and len(trees) != n_expected:
        raise DimensionError(f"{len(trees)} parses for {n_expected} sentences")
    return trees


def _write_manifest(out_dir, command, argv, args, results=()):
    lines = [f"tool=scenemt {__version__}", f"command={command}",
             f"argv={shlex.join(argv)}"]
    for key in sorted(vars(args)):
        if key.startswith("_") or key == "func":
            continue
        lines.append(f"arg.{key}={getattr(args, key)}")
    for key, value in results:
        lines.append(f"result.{key}={value}")
    (Path(out_dir) / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- head-spec flags ------------------------------------------------------------


def _parse_placement(spec_str, default, c_flag):
    """Override a default placement from 'layers=2&3;heads=1;family=scaled;C=0.1'."""
    layers, heads = default.layers, default.heads
    family, c, label = default.mask.family, default.mask.c, default.label
    explicit_c = None
    for part in filter(None, (spec_str or "").split(";")):
        if "=" not in part:
            raise ConfigError(f"bad head-spec fragment {part!r}")
        key, value = part.split("=", 1)
        if key == "layers":
            layers = {int(x) for x in value.replace("&", ",").split(",")}
        elif key == "heads":
            heads = {int(x) for x in value.replace("&", ",").split(",")}
        elif key == "family":
            family = value
        elif key == "C":
            explicit_c = float(value)
        elif key == "label":
            label = value
        else:
            raise ConfigError(f"unknown head-spec key {key!r}")
    if explicit_c is not None:
        c = explicit_c
    elif c_flag is not None and family in ("scaled", "normal"):
        # the bare --C flag only applies where the family takes a scale
        c = c_flag
    return HeadSpec(default.site, layers, heads, MaskSpec(family, c), label)


def _collect_specs(args):
    specs = []
    if args.sasa is not None:
        specs.append(_parse_placement(args.sasa, model_mod.sasa_default(), args.C))
    if args.sacra is not None:
        specs.append(_parse_placement(args.sacra, model_mod.sacra_default(), args.C))
    if args.pascal is not None:
        specs.append(_parse_placement(args.pascal, model_mod.pascal_default(), None))
    if args.udiscal is not None:
        specs.append(_parse_placement(args.udiscal, model_mod.udiscal_default(), None))
    return specs


def _build_spec_masks(specs, sentences, args):
    """Per-label mask matrices for every sentence, built once up front."""
    n = len(sentences)
    need_cover = [s for s in specs if s.mask.family in SCENE_FAMILIES]
    need_tree = [s for s in specs if s.mask.family in ("pascal", "udiscal")]
    covers = _load_covers(args, n) if need_cover else None
    trees = _load_trees(args, n) if need_tree else None
    aligns = (
        _read_alignments(args.alignment, n)
        if getattr(args, "alignment", None)
        else None
    )
    table = {}
    for spec in specs:
        built = []
        for i in range(n):
            align = aligns[i] if aligns else None
            if spec.mask.family in SCENE_FAMILIES:
                if covers[i].length != len(sentences[i]):
                    raise DimensionError(
                        f"cover {i} describes {covers[i].length} tokens, "
                        f"sentence has {len(sentences[i])}"
                    )
                built.append(spec.mask.build(cover=covers[i], align=align).values)
            else:
                built.append(spec.mask.build(ud=trees[i], align=align).values)
        table[spec.label] = built
    return table


# -- model directory ------------------------------------------------------------


def _save_model_dir(out, model, src_vocab, trg_vocab):
    autodiff.save_checkpoint(out / "checkpoint.ckpt", model.state_arrays())
    cfg = model.cfg
    lines = [
        f"src_vocab={cfg.src_vocab}",
        f"trg_vocab={cfg.trg_vocab}",
        f"d_model={cfg.d_model}",
        f"enc_layers={cfg.enc_layers}",
        f"dec_layers={cfg.dec_layers}",
        f"heads={cfg.heads}",
        f"d_ff={cfg.d_ff}",
        f"max_len={cfg.max_len}",
    ]
    for spec in model.head_specs:
        layers = ",".join(str(x) for x in sorted(spec.layers))
        heads = ",".join(str(x) for x in sorted(spec.heads))
        c = "" if spec.mask.c is None else repr(spec.mask.c)
        lines.append(
            f"headspec=site={spec.site};layers={layers};heads={heads};"
            f"family={spec.mask.family};C={c};label={spec.label}"
        )
    (out / "model.cfg").write_text("\n".join(lines) + "\n", encoding="utf-8")
    src_vocab.save(out / "src.vocab")
    trg_vocab.save(out / "trg.vocab")


def _load_model_dir(path):
    path = Path(path)
    fields, specs = {}, []
    for line in _read_text(path / "model.cfg").splitlines():
        if not line.strip():
            continue
        key, value = line.split("=", 1)
        if key == "headspec":
            opts = dict(part.split("=", 1) for part in value.split(";"))
            specs.append(
                HeadSpec(
                    opts["site"],
                    {int(x) for x in opts["layers"].split(",")},
                    {int(x) for x in opts["heads"].split(",")},
                    MaskSpec(opts["family"], float(opts["C"]) if opts["C"] else None),
                    opts["label"],
                )
            )
        else:
            fields[key] = int(value)
    cfg = ModelConfig(**fields)
    model = model_mod.Model(cfg, specs, seed=0)
    model.load_state(autodiff.load_checkpoint(path / "checkpoint.ckpt"))
    src_vocab = Vocab.load(path / "src.vocab")
    trg_vocab = Vocab.load(path / "trg.vocab")
    return model, src_vocab, trg_vocab


# -- commands --------------------------------------------------------------------


def cmd_masks(args, argv):
    spec = MaskSpec(args.family, args.C)
    out = _out_dir(args)
    if spec.needs_cover:
        covers = _load_covers(args)
        aligns = (
            _read_alignments(args.alignment, len(covers)) if args.alignment else None
        )
        built = [
            spec.build(cover=c, align=aligns[i] if aligns else None)
            for i, c in enumerate(covers)
        ]
    else:
        trees = _load_trees(args)
        aligns = (
            _read_alignments(args.alignment, len(trees)) if args.alignment else None
        )
        built = [
            spec.build(ud=t, align=aligns[i] if aligns else None)
            for i, t in enumerate(trees)
        ]
    for i, mask in enumerate(built):
        (out / f"mask_{i:04d}.mask").write_text(masks_mod.write_mask(mask), encoding="utf-8")
    _write_manifest(out, "masks", argv, args, [("count", len(built))])
    print(f"wrote {len(built)} mask files to {out}")
    return 0


def cmd_train(args, argv):
    out = _out_dir(args)
    src_sents = _read_sentences(args.src)
    trg_sents = _read_sentences(args.trg)
    if len(src_sents) != len(trg_sents):
        raise DimensionError(
            f"{len(src_sents)} source vs {len(trg_sents)} target sentences"
        )
    specs = _collect_specs(args)
    mask_table = _build_spec_masks(specs, src_sents, args)

    src_vocab = Vocab.from_corpus(src_sents)
    trg_vocab = Vocab.from_corpus(trg_sents)
    pairs = [
        (src_vocab.encode(s), trg_vocab.encode(t))
        for s, t in zip(src_sents, trg_sents)
    ]
    model_cfg = ModelConfig(
        src_vocab=len(src_vocab),
        trg_vocab=len(trg_vocab),
        d_model=args.d_model,
        enc_layers=args.layers,
        dec_layers=args.layers,
        heads=args.heads,
        d_ff=args.d_ff,
        max_len=args.max_len,
    )
    train_cfg = TrainConfig(
        steps=args.steps,
        batch_size=args.batch_size,
        seed=args.seed,
        warmup=args.warmup,
        label_smoothing=args.label_smoothing,
        adam_eps=args.adam_eps,
        eval_every=args.eval_every,
        target_accuracy=args.target_accuracy,
    )
    provider = (lambda i: {label: mats[i] for label, mats in mask_table.items()})
    result = model_mod.train(pairs, model_cfg, train_cfg, specs, provider)

    _save_model_dir(out, result.model, src_vocab, trg_vocab)
    (out / "loss.txt").write_text(
        "".join(f"{v:.17g}\n" for v in result.losses), encoding="utf-8"
    )
    _write_manifest(
        out, "train", argv, args,
        [("steps_run", result.steps_run),
         ("loss_step0", f"{result.losses[0]:.17g}"),
         ("final_loss", f"{result.losses[-1]:.17g}"),
         ("final_accuracy", f"{result.accuracy:.6f}")],
    )
    print(
        f"trained {result.steps_run} steps, final accuracy {result.accuracy:.4f}"
    )
    return 0


def _decode_cfg(args, model):
    return DecodeConfig(
        beam=args.beam,
        alpha=args.alpha,
        max_len=min(args.max_len, model.cfg.max_len - 1),
    )


def cmd_translate(args, argv):
    out = _out_dir(args)
    model, src_vocab, trg_vocab = _load_model_dir(args.model)
    sentences = _read_sentences(args.src)
    mask_table = _build_spec_masks(model.head_specs, sentences, args)
    cfg = _decode_cfg(args, model)
    hyps = []
    for i, tokens in enumerate(sentences):
        if not tokens:
            hyps.append("")
            continue
        masks = {label: mats[i] for label, mats in mask_table.items()}
        result = model_mod.translate(
            model, src_vocab.encode(tokens), masks, cfg, greedy=args.greedy
        )
        hyps.append(" ".join(trg_vocab.decode(result.tokens)))
    (out / "hyps.txt").write_text("".join(h + "\n" for h in hyps), encoding="utf-8")
    _write_manifest(out, "translate", argv, args, [("count", len(hyps))])
    print(f"translated {len(hyps)} sentences to {out / 'hyps.txt'}")
    return 0


def cmd_split(args, argv):
    """Scene-split pipeline: translate each scene, join with a period."""
    out = _out_dir(args)
    model, src_vocab, trg_vocab = _load_model_dir(args.model)
    if any(s.mask.family not in SCENE_FAMILIES for s in model.head_specs):
        raise ConfigError(
            "split pipeline supports scene-mask heads only; dependency masks "
            "would need parses of each fragment"
        )
    sentences = _read_sentences(args.src)
    covers = _load_covers(args, len(sentences))
    cfg = _decode_cfg(args, model)
    outputs = []
    for tokens, cover in zip(sentences, covers):
        if not tokens:
            outputs.append("")
            continue
        pieces = sem_split(tokens, cover)
        translated = []
        for piece in pieces:
            masks = {
                spec.label: spec.mask.build(
                    cover=_single_scene_cover(len(piece))
                ).values
                for spec in model.head_specs
            }
            result = model_mod.translate(
                model, src_vocab.encode(piece), masks, cfg, greedy=args.greedy
            )
            translated.append(" ".join(trg_vocab.decode(result.tokens)))
        outputs.append(" . ".join(translated))
    (out / "hyps.txt").write_text("".join(h + "\n" for h in outputs), encoding="utf-8")
    _write_manifest(out, "split", argv, args, [("count", len(outputs))])
    print(f"split-translated {len(outputs)} sentences to {out / 'hyps.txt'}")
    return 0


def _single_scene_cover(n):
    scene = semgraph.Scene(0, frozenset(range(n)), "P", frozenset({0}))
    return semgraph.SceneCover(n, [scene], frozenset())


def cmd_evaluate(args, argv):
    out = _out_dir(args)
    hyps = _read_text(args.hyp).splitlines()
    refs = _read_text(args.ref).splitlines()
    reports = []
    if args.metric in ("bleu", "both"):
        reports.append(metrics.bleu(hyps, refs, per_sentence=args.per_sentence))
    if args.metric in ("chrf", "both"):
        reports.append(
            metrics.chrf(hyps, refs, beta=args.beta, per_sentence=args.per_sentence)
        )
    (out / "scores.txt").write_text(metrics.write_reports(reports), encoding="utf-8")
    if args.per_sentence:
        (out / "scores.tsv").write_text(
            metrics.write_per_sentence_tsv(reports), encoding="utf-8"
        )
    _write_manifest(out, "evaluate", argv, args,
                    [(r.metric, f"{r.score:.2f}") for r in reports])
    for r in reports:
        print(r.line())
    return 0


def cmd_compare(args, argv):
    reports_a = metrics.parse_reports(_read_text(args.a))
    reports_b = metrics.parse_reports(_read_text(args.b))
    if len(reports_a) != len(reports_b):
        raise DimensionError(
            f"{len(reports_a)} vs {len(reports_b)} score lines"
        )
    p = metrics.sign_test([r.score for r in reports_a], [r.score for r in reports_b])
    line = f"sign_test n={len(reports_a)} p={p:.6f}"
    print(line)
    if args.out:
        out = _out_dir(args)
        (out / "compare.txt").write_text(line + "\n", encoding="utf-8")
        _write_manifest(out, "compare", argv, args, [("p", f"{p:.6f}")])
    return 0


def cmd_rerun(args, argv):
    command = stored_argv = None
    for line in _read_text(args.manifest).splitlines():
        if line.startswith("command="):
            command = line.split("=", 1)[1]
        elif line.startswith("argv="):
            stored_argv = shlex.split(line.split("=", 1)[1])
    if command is None or stored_argv is None:
        raise ParseError(f"{args.manifest} lacks command/argv records")
    if args.out:
        stored_argv = stored_argv + ["--out", args.out]
    return main(stored_argv)


# -- argument parsing ---------------------------------------------------------------


def _add_mask_inputs(p):
    p.add_argument("--ucca", help="semantic graph file (one or more graphs)")
    p.add_argument("--cover", help="scene-cover shortcut file")
    p.add_argument("--conllu", help="CoNLL-U dependency parses")
    p.add_argument("--alignment", help="subword counts per word, one line per sentence")


def _add_decode_flags(p):
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--alpha", type=float, default=0.6, help="length normalization power")
    p.add_argument("--max-len", type=int, default=64, dest="max_len")
    p.add_argument("--greedy", action="store_true", help="argmax decoding")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="scenemt",
        description="Scene-aware attention masks and a small NMT pipeline.",
    )
    parser.add_argument("--version", action="version", version=f"scenemt {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("masks", help="build attention-mask files")
    p.add_argument("--family", required=True, choices=masks_mod.FAMILIES)
    p.add_argument("--C", type=float, default=None)
    _add_mask_inputs(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_masks)

    p = sub.add_parser("train", help="train a model on a parallel corpus")
    p.add_argument("--src", required=True)
    p.add_argument("--trg", required=True)
    p.add_argument("--out", required=True)
    _add_mask_inputs(p)
    for flag, help_text in (
        ("--sasa", "scene-aware self-attention head(s)"),
        ("--sacra", "scene-aware cross-attention head(s)"),
        ("--pascal", "parent-Gaussian head(s)"),
        ("--udiscal", "tree-distance head(s)"),
    ):
        p.add_argument(
            flag, nargs="?", const="", default=None, metavar="SPEC",
            help=f"{help_text}; SPEC like 'layers=2,3;heads=1;family=scaled'",
        )
    p.add_argument("--C", type=float, default=None, help="scale for scaled/normal masks")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--batch-size", type=int, default=128, dest="batch_size")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--warmup", type=int, default=4000)
    p.add_argument("--label-smoothing", type=float, default=0.1, dest="label_smoothing")
    p.add_argument("--adam-eps", type=float, default=1e-9, dest="adam_eps")
    p.add_argument("--d-model", type=int, default=256, dest="d_model")
    p.add_argument("--layers", type=int, default=4, help="encoder and decoder depth")
    p.add_argument("--heads", type=int, default=8, help="attention heads per layer")
    p.add_argument("--d-ff", type=int, default=None, dest="d_ff")
    p.add_argument("--max-len", type=int, default=64, dest="max_len")
    p.add_argument("--eval-every", type=int, default=0, dest="eval_every")
    p.add_argument("--target-accuracy", type=float, default=None, dest="target_accuracy")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="decode a source file with a trained model")
    p.add_argument("--model", required=True, help="directory written by train")
    p.add_argument("--src", required=True)
    p.add_argument("--out", required=True)
    _add_mask_inputs(p)
    _add_decode_flags(p)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("split", help="translate each scene separately, join with periods")
    p.add_argument("--model", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--out", required=True)
    _add_mask_inputs(p)
    _add_decode_flags(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("evaluate", help="score hypotheses against references")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--metric", choices=("bleu", "chrf", "both"), default="both")
    p.add_argument("--beta", type=float, default=3.0, help="chrF recall weight")
    p.add_argument("--per-sentence", action="store_true", dest="per_sentence",
                   help="also write per-sentence scores as TSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="sign test between two score files")
    p.add_argument("--a", required=True, help="baseline score file")
    p.add_argument("--b", required=True, help="candidate score file")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("rerun", help="replay a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="override the output directory")
    p.set_defaults(func=cmd_rerun)

    return parser


def main(argv=None):
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.func is cmd_rerun:
            return cmd_rerun(args, argv)
        return args.func(args, list(argv))
    except ConfigError as exc:
        print(f"scenemt: config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"scenemt: numeric failure: {exc}", file=sys.stderr)
        return 4
    except SceneMtError as exc:
        print(f"scenemt: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
