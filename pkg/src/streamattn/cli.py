"""Command line front end.

Subcommands cover the full experiment loop: gen-data, train, decode,
eval, masks, attn, bench. Run configuration comes from defaults, then an
optional JSON config file, then flags, in that order of precedence.
Unknown config keys are rejected by name rather than ignored.

Exit codes: 0 success, 1 usage error, 2 runtime error. The environment
variable STREAMATTN_OUT supplies the default output directory.
"""

import argparse
import copy
import json
import os
import sys

import numpy as np

from . import analysis, bench, kernels, metrics
from .corpus import (BOS_ID, EOS_ID, ParallelPair, SyntheticTaskSpec, TASK_KINDS,
                     generate, load_jsonl, save_jsonl)
from .model import (ModelConfig, POS_ZERO_MODES, TrainHyper, init_parameters,
                    load_checkpoint, next_token_accuracy, remove_positions,
                    save_checkpoint, train, training_arrangement)
from .paradigm import Paradigm, arrange, mask_report, waitk_schedule
from .stream import DecodeSession, decode, length_cap

DEFAULT_CONFIG = {
    "model": {
        "layers": 2,
        "heads": 4,
        "d_model": 64,
        "vocab_size": 64,
        "max_positions": 4096,
        "ffn_mult": 4,
        "precision": "fp32",
        "tied_head": False,
        "rope_base": 10000.0,
    },
    "paradigm": "group",
    "k": 3,
    "phi": 0.0,
    "task": {
        "kind": "mapped",
        "vocab_size": 64,
        "len_min": 8,
        "len_max": 16,
        "seed": 1234,
    },
    "train": {
        "lr": 2e-3,
        "steps": 2000,
        "batch_size": 16,
        "seed": 0,
        "pos_zero": "none",
        "train_size": 4096,
        "eval_size": 256,
    },
    "out": None,
}


def merge_config(base: dict, override: dict, path: str = "") -> dict:
    """Overlay override onto base, rejecting keys base does not define."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ValueError(f"unknown config key: {where}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            merged[key] = merge_config(base[key], value, where + ".")
        else:
            merged[key] = value
    return merged


def load_run_config(path=None) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
        if not isinstance(data, dict):
            raise ValueError(f"{path}: config root must be a JSON object")
        cfg = merge_config(cfg, data)
    return cfg


def _apply_flag(cfg, section, key, value):
    if value is not None:
        if section is None:
            cfg[key] = value
        else:
            cfg[section][key] = value


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage by default; the contract here is 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _out_dir(args) -> str:
    out = getattr(args, "out", None) or os.environ.get("STREAMATTN_OUT") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _int_list(text: str):
    items = [int(x) for x in text.replace(",", " ").split()]
    if not items:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return items


def _paradigm_list(text: str):
    return [Paradigm.from_name(x.strip()) for x in text.split(",") if x.strip()]


def _task_from_config(cfg) -> SyntheticTaskSpec:
    t = cfg["task"]
    return SyntheticTaskSpec(kind=t["kind"], vocab_size=t["vocab_size"],
                             len_min=t["len_min"], len_max=t["len_max"], seed=t["seed"])


def _model_from_config(cfg) -> ModelConfig:
    return ModelConfig(**cfg["model"])


def _hyper_from_config(cfg) -> TrainHyper:
    t = cfg["train"]
    return TrainHyper(lr=t["lr"], steps=t["steps"], batch_size=t["batch_size"],
                      seed=t["seed"], k=cfg["k"], pos_zero=t["pos_zero"])


# ---------------------------------------------------------------- subcommands

def cmd_gen_data(args) -> int:
    spec = SyntheticTaskSpec(kind=args.kind, vocab_size=args.vocab_size,
                             len_min=args.len_min, len_max=args.len_max, seed=args.seed)
    pairs = generate(spec, args.count)
    path = args.file or os.path.join(_out_dir(args), "data.jsonl")
    save_jsonl(pairs, path)
    print(f"wrote {len(pairs)} pairs to {path}")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    _apply_flag(cfg, None, "paradigm", args.paradigm)
    _apply_flag(cfg, None, "k", args.k)
    _apply_flag(cfg, None, "phi", args.phi)
    _apply_flag(cfg, "model", "precision", args.precision)
    _apply_flag(cfg, "train", "seed", args.seed)
    _apply_flag(cfg, "train", "lr", args.lr)
    _apply_flag(cfg, "train", "steps", args.steps)
    _apply_flag(cfg, "train", "batch_size", args.batch_size)
    _apply_flag(cfg, "train", "pos_zero", args.pos_zero)
    _apply_flag(cfg, "train", "train_size", args.train_size)
    _apply_flag(cfg, "train", "eval_size", args.eval_size)
    _apply_flag(cfg, None, "out", args.out)
    args.out = cfg["out"]

    paradigm = Paradigm.from_name(cfg["paradigm"])
    model_cfg = _model_from_config(cfg)
    hyper = _hyper_from_config(cfg)
    task = _task_from_config(cfg)
    if task.vocab_size > model_cfg.vocab_size:
        raise ValueError("task vocab_size exceeds model vocab_size")

    if args.data is not None:
        all_pairs = load_jsonl(args.data, vocab_size=model_cfg.vocab_size)
        if len(all_pairs) < cfg["train"]["train_size"] + cfg["train"]["eval_size"]:
            raise ValueError("data file smaller than train_size + eval_size")
    else:
        all_pairs = generate(task, cfg["train"]["train_size"] + cfg["train"]["eval_size"])
    train_pairs = all_pairs[: cfg["train"]["train_size"]]
    eval_pairs = all_pairs[cfg["train"]["train_size"]:]

    params, curve = train(model_cfg, paradigm, cfg["phi"], train_pairs, hyper)

    eval_arrs = [training_arrangement(p, paradigm, hyper.k, cfg["phi"],
                                      pos_zero=hyper.pos_zero) for p in eval_pairs]
    acc = next_token_accuracy(model_cfg, params, eval_arrs)

    out = _out_dir(args)
    meta = {
        "paradigm": paradigm.value,
        "k": hyper.k,
        "phi": cfg["phi"],
        "pos_zero": hyper.pos_zero,
        "task": cfg["task"],
        "train": cfg["train"],
        "eval_accuracy": acc,
        "final_loss": curve[-1] if curve else None,
    }
    ckpt = os.path.join(out, "checkpoint.bin")
    save_checkpoint(ckpt, model_cfg, params, meta)
    with open(os.path.join(out, "loss_curve.csv"), "w", encoding="utf-8") as f:
        f.write("step,loss\n")
        for i, value in enumerate(curve):
            f.write(f"{i},{value:.6f}\n")
    with open(os.path.join(out, "run_config.json"), "w", encoding="utf-8") as f:
        json.dump(cfg, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"trained {paradigm.value} k={hyper.k} steps={hyper.steps} "
          f"final_loss={curve[-1]:.4f} eval_acc={acc:.4f}")
    print(f"checkpoint: {ckpt}")
    return 0


def _meta_default(args, meta, key, cast=None):
    value = getattr(args, key.replace("-", "_"), None)
    if value is None:
        value = meta.get(key)
    if value is None:
        raise ValueError(f"--{key} not given and checkpoint meta lacks it")
    return cast(value) if cast else value


def cmd_decode(args) -> int:
    model_cfg, params, meta = load_checkpoint(args.checkpoint)
    paradigm = Paradigm.from_name(_meta_default(args, meta, "paradigm"))
    k = int(_meta_default(args, meta, "k"))
    pos_zero = args.pos_zero or meta.get("pos_zero", "none")
    phi = args.phi
    if phi is None and paradigm is Paradigm.GROUP_STREAM:
        phi = float(meta.get("phi", 0.0))

    pairs = load_jsonl(args.input, vocab_size=model_cfg.vocab_size)
    path = args.file or os.path.join(_out_dir(args), "decode.jsonl")
    emitted_total = 0
    with open(path, "w", encoding="utf-8") as f:
        for pair in pairs:
            session = DecodeSession(model_cfg, params, paradigm, k, phi, pair.source,
                                    pos_zero=pos_zero, max_tokens=args.max_tokens)
            trace = decode(session)
            emitted_total += len(trace.tokens)
            record = {
                "tokens": [int(t) for t in trace.tokens],
                "g": [int(x) for x in trace.g],
                "seconds": [round(s, 9) for s in trace.step_seconds],
                "finish": trace.finish_reason,
            }
            f.write(json.dumps(record) + "\n")
    print(f"decoded {len(pairs)} sentences ({emitted_total} tokens) to {path}")
    return 0


def _load_decodes(path):
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if "tokens" not in rec or "g" not in rec:
                raise ValueError(f"{path}:{lineno}: decode record needs tokens and g")
            records.append(rec)
    return records


def cmd_eval(args) -> int:
    hyps = _load_decodes(args.hyp)
    refs = load_jsonl(args.ref)
    if len(hyps) != len(refs):
        raise ValueError(f"hypothesis count {len(hyps)} != reference count {len(refs)}")
    hyp_tokens = [list(r["tokens"]) for r in hyps]
    ref_tokens = [list(p.target_content) for p in refs]
    bleu = metrics.corpus_bleu(hyp_tokens, ref_tokens)
    acc = float(np.mean([metrics.token_accuracy(h, r)
                         for h, r in zip(hyp_tokens, ref_tokens)]))
    al_values, laal_values, skipped = [], [], 0
    for rec, pair in zip(hyps, refs):
        if not rec["g"]:
            skipped += 1
            continue
        lag = metrics.lagging(rec["g"], len(pair.source), len(pair.target_content))
        al_values.append(lag.al)
        laal_values.append(lag.laal)
    result = {
        "bleu": bleu,
        "accuracy": acc,
        "al": float(np.mean(al_values)) if al_values else None,
        "laal": float(np.mean(laal_values)) if laal_values else None,
        "sentences": len(hyps),
        "skipped_lagging": skipped,
    }
    path = args.file or os.path.join(_out_dir(args), "metrics.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(result, f, indent=2, sort_keys=True)
        f.write("\n")
    print(json.dumps(result, sort_keys=True))
    return 0


def cmd_masks(args) -> int:
    paradigm = Paradigm.from_name(args.paradigm)
    schedule = waitk_schedule(args.k, args.src_len, args.tgt_len)
    source = np.arange(args.src_len) % 7 + 3
    target = np.arange(args.tgt_len) % 7 + 3
    arr = arrange(paradigm, schedule, args.phi, source, target)
    for row in arr.attn_mask.astype(int):
        print(",".join(str(v) for v in row))
    if args.out is not None:
        out = _out_dir(args)
        with open(os.path.join(out, "mask.csv"), "w", encoding="utf-8") as f:
            for row in arr.attn_mask.astype(int):
                f.write(",".join(str(v) for v in row) + "\n")
        with open(os.path.join(out, "layout.csv"), "w", encoding="utf-8") as f:
            f.write("token,role,arrival,position,loss\n")
            for i in range(len(arr.tokens)):
                f.write(f"{arr.tokens[i]},{arr.roles[i]},{arr.arrival_index[i]},"
                        f"{arr.positions[i]:g},{int(arr.loss_mask[i])}\n")
        report = mask_report(arr)
        report["positions"] = [float(p) for p in arr.positions]
        report["roles"] = [int(r) for r in arr.roles]
        with open(os.path.join(out, "mask_report.json"), "w", encoding="utf-8") as f:
            json.dump(report, f, indent=2, sort_keys=True)
            f.write("\n")
    return 0


def cmd_attn(args) -> int:
    model_cfg, params, meta = load_checkpoint(args.checkpoint)
    paradigm = Paradigm.from_name(_meta_default(args, meta, "paradigm"))
    k = int(_meta_default(args, meta, "k"))
    pos_zero = meta.get("pos_zero", "none") if args.pos_zero is None else args.pos_zero
    phi = args.phi
    if phi is None and paradigm is Paradigm.GROUP_STREAM:
        phi = float(meta.get("phi", 0.0))

    source = np.array(_int_list(args.input))
    session = DecodeSession(model_cfg, params, paradigm, k, phi, source,
                            pos_zero=pos_zero)
    trace = decode(session)
    fed = np.array([BOS_ID] + [int(t) for t in trace.tokens])
    schedule = waitk_schedule(k, len(source), len(fed))
    arr = arrange(paradigm, schedule, phi, source, fed)
    if pos_zero != "none":
        positions = remove_positions(arr.positions, arr.roles, pos_zero)
        arr = type(arr)(**{**arr.__dict__, "positions": positions})

    amap = analysis.capture_attention_map(model_cfg, params, arr, args.layer, args.head)
    matrix = amap.matrix
    key_roles = list(amap.key_roles)
    if args.strip_sink:
        matrix = analysis.sink_strip(matrix)
        key_roles = key_roles[1:]
    if args.normalize:
        matrix = analysis.normalize_columns(matrix)
    if args.gamma is not None:
        matrix = analysis.gamma_transform(matrix, args.gamma)
    amap = analysis.AttentionMap(layer=amap.layer, head=amap.head, matrix=matrix,
                                 query_roles=amap.query_roles, key_roles=key_roles)

    default_name = f"attn_l{args.layer}h{args.head}.{args.format}"
    path = args.file or os.path.join(_out_dir(args), default_name)
    analysis.export(amap, path, args.format)
    print(f"decoded {len(trace.tokens)} tokens; wrote {args.format} map to {path}")
    return 0


def cmd_bench(args) -> int:
    if args.checkpoint is not None:
        model_cfg, params, meta = load_checkpoint(args.checkpoint)
    else:
        model_cfg = ModelConfig(layers=args.layers, heads=args.heads,
                                d_model=args.d_model, vocab_size=args.vocab_size,
                                max_positions=args.max_positions,
                                precision=args.precision or "fp32")
        params = init_parameters(model_cfg, seed=args.seed or 0)
        meta = None
    needed = max(args.lengths) + length_cap(max(args.lengths)) + 1
    if model_cfg.max_positions < needed:
        raise ValueError(f"max_positions {model_cfg.max_positions} too small for "
                         f"longest bench sentence (needs {needed})")
    backends = args.backends.split(",") if args.backends else None
    report = bench.run_bench(model_cfg, params, args.paradigms, args.k, args.lengths,
                             repetitions=args.reps, backends=backends,
                             trained_meta=meta)
    path = args.file or os.path.join(_out_dir(args), "bench.csv")
    bench.report_csv(report, path)
    header = f"{'backend':<8}{'paradigm':<16}{'k':>3}{'n':>5}{'seconds':>11}" \
             f"{'tok/s':>10}{'attn_ops':>10}{'recompute':>11}{'speedup':>9}"
    print(header)
    for r in report.rows:
        speedup = f"{r.speedup_vs_allre:8.2f}" if r.speedup_vs_allre else "        "
        print(f"{r.backend:<8}{r.paradigm.value:<16}{r.k:>3}{r.source_len:>5}"
              f"{r.seconds:>11.5f}{r.tokens_per_s:>10.1f}{r.attention_ops:>10}"
              f"{r.recompute_ops:>11} {speedup}")
    print(f"csv: {path}")
    return 0


# --------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="streamattn",
                     description="streaming attention paradigm experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic JSONL corpus")
    p.add_argument("--kind", choices=TASK_KINDS, default="mapped")
    p.add_argument("--vocab-size", type=int, default=64)
    p.add_argument("--len-min", type=int, default=8)
    p.add_argument("--len-max", type=int, default=16)
    p.add_argument("--seed", type=int, default=1234)
    p.add_argument("--count", type=int, default=1024)
    p.add_argument("--out", help="output directory (or $STREAMATTN_OUT)")
    p.add_argument("--file", help="explicit output file path")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model under one paradigm")
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--paradigm", choices=[x.value for x in Paradigm])
    p.add_argument("--k", type=int)
    p.add_argument("--phi", type=float)
    p.add_argument("--precision", choices=("fp32", "fp64"))
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--pos-zero", choices=POS_ZERO_MODES)
    p.add_argument("--train-size", type=int)
    p.add_argument("--eval-size", type=int)
    p.add_argument("--data", help="JSONL corpus instead of synthetic generation")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="incrementally decode a JSONL corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="JSONL with source sentences")
    p.add_argument("--paradigm", choices=[x.value for x in Paradigm])
    p.add_argument("--k", type=int)
    p.add_argument("--phi", type=float)
    p.add_argument("--pos-zero", choices=POS_ZERO_MODES)
    p.add_argument("--max-tokens", type=int)
    p.add_argument("--out")
    p.add_argument("--file", help="explicit output file path")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="score decode output against references")
    p.add_argument("--hyp", required=True, help="decode JSONL")
    p.add_argument("--ref", required=True, help="reference JSONL")
    p.add_argument("--out")
    p.add_argument("--file", help="explicit output file path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("masks", help="print the attention mask for a layout")
    p.add_argument("--paradigm", required=True, choices=[x.value for x in Paradigm])
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--src-len", type=int, required=True)
    p.add_argument("--tgt-len", type=int, required=True)
    p.add_argument("--phi", type=float)
    p.add_argument("--out", nargs="?", const="", default=None,
                   help="also write mask.csv and mask_report.json here")
    p.set_defaults(func=cmd_masks)

    p = sub.add_parser("attn", help="export an attention map from a decode")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="space/comma separated token ids")
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--head", type=int, default=0)
    p.add_argument("--paradigm", choices=[x.value for x in Paradigm])
    p.add_argument("--k", type=int)
    p.add_argument("--phi", type=float)
    p.add_argument("--pos-zero", choices=POS_ZERO_MODES)
    p.add_argument("--normalize", action="store_true",
                   help="per-column min-max contrast")
    p.add_argument("--gamma", type=float, help="gamma exponent after normalization")
    p.add_argument("--strip-sink", action="store_true",
                   help="drop the first key column")
    p.add_argument("--format", choices=("csv", "svg"), default="csv")
    p.add_argument("--out")
    p.add_argument("--file", help="explicit output file path")
    p.set_defaults(func=cmd_attn)

    p = sub.add_parser("bench", help="time decoding across paradigms")
    p.add_argument("--paradigms", type=_paradigm_list,
                   default=[Paradigm.BATCH_ALL_RE, Paradigm.BATCH_POS_RE,
                            Paradigm.BATCH_NO_RE, Paradigm.GROUP_STREAM])
    p.add_argument("--k", type=_int_list, default=[5, 9])
    p.add_argument("--lengths", type=_int_list, default=[32, 64, 128])
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--backends", help="comma list from: " +
                   ",".join(kernels.available_backends()))
    p.add_argument("--checkpoint", help="reuse a trained model")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--vocab-size", type=int, default=64)
    p.add_argument("--max-positions", type=int, default=4096)
    p.add_argument("--precision", choices=("fp32", "fp64"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--file", help="explicit output file path")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else int(e.code)
    try:
        return args.func(args) or 0
    except (ValueError, KeyError, OSError, RuntimeError, NotImplementedError) as exc:
        print(f"streamattn {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
