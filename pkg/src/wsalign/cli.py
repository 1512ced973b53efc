"""wsalign command line: align, oer, synth, eval, ablate."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import io as wio
from .aligner import (
    ADAPTIVE,
    AlignmentError,
    InfeasibleAlignmentError,
    Mode,
    adaptive_beta,
    compute_oer,
    force_align,
)
from .config import ARC_TYPES, CONFIG_ENV, ConfigError, RunConfig, load_config
from .experiment import RunSpec, ablation, load_corpus, score_alignment
from .graphs import LogProbMatrix, PhoneTranscript, PhoneVocab
from .metrics import (
    Level,
    MetricsError,
    MetricsReport,
    format_severity,
    format_table,
    severity_report,
)
from .synth import SynthError, build_corpus, random_refs

log = logging.getLogger("wsalign")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_INFEASIBLE = 4


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_FORMAT):
        super().__init__(message)
        self.code = code


def _beta(text: str):
    if text == ADAPTIVE:
        return text
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'adaptive', got {text!r}") from None
    if math.isnan(value) or value < 0:
        raise argparse.ArgumentTypeError("beta must be non-negative")
    return value


def _vocab(cfg: RunConfig) -> PhoneVocab:
    if cfg.vocab is None:
        return PhoneVocab.default()
    if not Path(cfg.vocab).is_file():
        raise CliError(f"vocabulary file not found: {cfg.vocab}")
    return wio.read_vocab(cfg.vocab)


def _inputs(args, vocab: PhoneVocab) -> list[tuple[str, Path, PhoneTranscript]]:
    """(utterance id, emission path, transcript) from a corpus or file list."""
    if args.corpus:
        root = Path(args.corpus)
        if not (root / "manifest.jsonl").is_file():
            raise CliError(f"no manifest.jsonl in {root}")
        out = []
        for rec in wio.read_manifest(root / "manifest.jsonl"):
            key = "verbatim_transcript" if args.verbatim else "transcript"
            out.append((rec["id"], root / rec["emissions"], PhoneTranscript.parse(rec[key], vocab)))
        return out
    if not args.emissions or not args.transcripts:
        raise CliError("give --corpus, or emission files with --transcripts", EXIT_USAGE)
    ys = wio.read_transcripts(args.transcripts, vocab)
    if len(ys) != len(args.emissions):
        raise CliError(f"{len(args.emissions)} emission files but {len(ys)} transcripts")
    return [(Path(p).name.split(".")[0], Path(p), y) for p, y in zip(args.emissions, ys)]


def _load_emissions(path: Path, cfg: RunConfig) -> LogProbMatrix:
    e = wio.read_emissions(path)
    if abs(e.frame_shift_ms - cfg.frame_shift_ms) > 1e-6:
        log.info("%s: file frame shift %.3g ms overrides config", path, e.frame_shift_ms)
    return e


def _batch(items, work) -> int:
    """Run ``work`` per item, log failures, return the exit code."""
    failures: dict[int, int] = {}
    for utt_id, *rest in items:
        try:
            work(utt_id, *rest)
        except InfeasibleAlignmentError as exc:
            log.error("%s: infeasible: %s", utt_id, exc)
            failures[EXIT_INFEASIBLE] = failures.get(EXIT_INFEASIBLE, 0) + 1
        except (ValueError, OSError, AlignmentError) as exc:
            log.error("%s: %s", utt_id, exc)
            failures[EXIT_FORMAT] = failures.get(EXIT_FORMAT, 0) + 1
    n_fail = sum(failures.values())
    print(f"processed {len(items)} utterances, {len(items) - n_fail} ok, {n_fail} failed",
          file=sys.stderr)
    if not failures:
        return EXIT_OK
    return EXIT_FORMAT if EXIT_FORMAT in failures else EXIT_INFEASIBLE


def cmd_align(args, cfg: RunConfig) -> int:
    vocab = _vocab(cfg)
    items = _inputs(args, vocab)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mode = Mode(cfg.mode)

    def work(utt_id, path, y):
        e = _load_emissions(path, cfg)
        ali = force_align(e, y, vocab, mode, cfg.beta, ph_max_words=cfg.ph_max_words,
                          disable=cfg.disable, lm_scale=cfg.lm_scale, add_k=cfg.add_k)
        wio.write_alignment(out / f"{utt_id}.tsv", ali, vocab, e.frame_shift_ms,
                            {"id": utt_id, "disable": cfg.disable})

    return _batch(items, work)


def cmd_oer(args, cfg: RunConfig) -> int:
    vocab = _vocab(cfg)
    items = _inputs(args, vocab)
    rows = []

    def work(utt_id, path, y):
        res = compute_oer(_load_emissions(path, cfg), y, vocab, cfg.lm_scale, cfg.add_k)
        rows.append({"id": utt_id, "oer": res.oer, "clipped": res.clipped,
                     "beta": adaptive_beta(res), "decoded": " ".join(vocab.decode(res.decoded_phones))})

    code = _batch(items, work)
    text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)
    if args.out:
        wio.atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return code


def cmd_synth(args, cfg: RunConfig) -> int:
    vocab = _vocab(cfg)
    if args.refs:
        paths = sorted(Path(args.refs).glob("*.tsv"))
        if not paths:
            raise CliError(f"no reference alignments (*.tsv) in {args.refs}")
        refs = [wio.read_ref_alignment(p, vocab) for p in paths]
    elif args.random:
        refs = random_refs(vocab, args.random, cfg.seed)
    else:
        raise CliError("give --refs DIR or --random N", EXIT_USAGE)
    records = build_corpus(refs, vocab, args.out, cfg.seed, cfg.clean_fraction, cfg.peak,
                           cfg.frame_shift_ms)
    print(f"wrote {len(records)} utterances to {args.out}", file=sys.stderr)
    return EXIT_OK


def _score_dir(pred_dir: Path, refs: dict, vocab: PhoneVocab, cfg: RunConfig,
               verbatim: bool = False) -> dict:
    level = Level(cfg.level)
    scores = {}
    for utt_id, ref in refs.items():
        path = pred_dir / f"{utt_id}.tsv"
        if not path.is_file():
            raise CliError(f"missing prediction for {utt_id} in {pred_dir}")
        ali, rec = wio.read_alignment(path, vocab)
        shift = float(rec.get("frame_shift_ms", cfg.frame_shift_ms))
        ids = ref.word_ids if verbatim else None
        scores[utt_id] = score_alignment(ali, ref, cfg.tolerance, shift, level, ids,
                                         vocab.blank_id, cfg.matching)
    return scores


def cmd_eval(args, cfg: RunConfig) -> int:
    vocab = _vocab(cfg)
    ref_dir = Path(args.ref)
    paths = sorted(ref_dir.glob("*.tsv"))
    if not paths:
        raise CliError(f"no reference alignments in {ref_dir}")
    refs = {p.name.split(".")[0]: wio.read_ref_alignment(p, vocab) for p in paths}
    scores = _score_dir(Path(args.pred), refs, vocab, cfg)
    report = MetricsReport.from_scores(scores.values())
    rows = {"approximate": report}
    result = {"config": cfg.to_dict(), "tolerance_ms": cfg.tolerance, "approximate": report.to_dict()}
    if args.verbatim_pred:
        vscores = _score_dir(Path(args.verbatim_pred), refs, vocab, cfg, verbatim=True)
        vreport = MetricsReport.from_scores(vscores.values())
        rows = {"verbatim": vreport, "approximate": report.with_reductions(vreport)}
        result["verbatim"] = vreport.to_dict()
        result["approximate"] = rows["approximate"].to_dict()
        if args.manifest:
            sev = severity_report(vscores, scores, wio.read_manifest(args.manifest))
            result["severity"] = sev
    elif args.manifest:
        raise CliError("a severity breakdown needs --verbatim-pred as the baseline", EXIT_USAGE)
    table = format_table(rows, reductions=bool(args.verbatim_pred))
    if "severity" in result:
        table += "\n" + format_severity(result["severity"])
    if args.out:
        out = Path(args.out)
        wio.atomic_write(out / "metrics.json", json.dumps(result, indent=2, sort_keys=True) + "\n")
        wio.atomic_write(out / "metrics.txt", table)
    sys.stdout.write(table)
    return EXIT_OK


def cmd_ablate(args, cfg: RunConfig) -> int:
    vocab = _vocab(cfg)
    utts = load_corpus(args.corpus, vocab)
    if not utts:
        raise CliError(f"empty corpus {args.corpus}")
    base = RunSpec(Mode.WEAKLY_SUPERVISED, cfg.beta, ph_max_words=cfg.ph_max_words,
                   lm_scale=cfg.lm_scale, add_k=cfg.add_k)
    rows = ablation(utts, vocab, base, cfg.tolerance, cfg.workers)
    table = format_table(rows, reductions=False)
    if args.out:
        out = Path(args.out)
        payload = {name: rep.to_dict() for name, rep in rows.items()}
        payload["config"] = cfg.to_dict()
        wio.atomic_write(out / "ablation.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")
        wio.atomic_write(out / "ablation.txt", table)
    sys.stdout.write(table)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"JSON run config (default: ${CONFIG_ENV})")
    common.add_argument("--vocab", help="vocabulary file, one symbol per line")
    common.add_argument("--mode", choices=["linear", "ws"])
    common.add_argument("--beta", type=_beta, help="disfluency prior exponent, or 'adaptive'")
    common.add_argument("--tolerance-ms", type=float)
    common.add_argument("--level", choices=["phone", "word"])
    common.add_argument("--matching", choices=["greedy", "nearest"])
    common.add_argument("--frame-shift-ms", type=float)
    common.add_argument("--disable-arcs", nargs="+", choices=ARC_TYPES, metavar="{W,D,PW}")
    common.add_argument("--ph-max-words", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--lm-scale", type=float)
    common.add_argument("--add-k", type=float)
    common.add_argument("--peak", type=float)
    common.add_argument("--clean-fraction", type=float)
    common.add_argument("--save-config", help="write the effective config here")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="wsalign", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def inputs(sp):
        sp.add_argument("emissions", nargs="*", help=".emis files")
        sp.add_argument("--transcripts", help="one transcript line per emission file")
        sp.add_argument("--corpus", help="corpus directory with manifest.jsonl")
        sp.add_argument("--verbatim", action="store_true",
                        help="with --corpus, use the verbatim transcripts")

    sp = sub.add_parser("align", parents=[common], help="force-align utterances")
    inputs(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_align)

    sp = sub.add_parser("oer", parents=[common], help="oracle error rate and adaptive beta")
    inputs(sp)
    sp.add_argument("--out", help="JSON-lines output (default stdout)")
    sp.set_defaults(func=cmd_oer)

    sp = sub.add_parser("synth", parents=[common], help="build a planted-disfluency corpus")
    sp.add_argument("--refs", help="directory of reference alignment .tsv files")
    sp.add_argument("--random", type=int, metavar="N", help="generate N random references")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("eval", parents=[common], help="score alignments against references")
    sp.add_argument("--pred", required=True, help="alignments from approximate transcripts")
    sp.add_argument("--ref", required=True, help="reference alignment directory")
    sp.add_argument("--verbatim-pred", help="alignments from verbatim transcripts (baseline)")
    sp.add_argument("--manifest", help="corpus manifest, for the severity breakdown")
    sp.add_argument("--out", help="directory for metrics.json and metrics.txt")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", parents=[common], help="disfluency-arc ablation table")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_ablate)
    return p


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    return cfg.override(
        vocab=args.vocab, mode=args.mode, beta=args.beta, tolerance_ms=args.tolerance_ms,
        level=args.level, matching=args.matching, frame_shift_ms=args.frame_shift_ms,
        disable=args.disable_arcs, ph_max_words=args.ph_max_words, seed=args.seed,
        workers=args.workers, lm_scale=args.lm_scale, add_k=args.add_k, peak=args.peak,
        clean_fraction=args.clean_fraction,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        if args.save_config:
            cfg.save(args.save_config)
        return args.func(args, cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleAlignmentError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (wio.FormatError, SynthError, MetricsError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
