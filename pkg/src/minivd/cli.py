"""Command-line entry points: data generation, training, evaluation, tools."""

import argparse
import json
import os
import sys

import numpy as np

from .chat import chat_loop
from .config import RunConfig
from .gradcheck import grad_check
from .synthworld import save_dataset
from .tensor import Tensor, tsum
from . import tensor as T
from .training import (
    ablate,
    dump_attention,
    evaluate_checkpoint,
    load_model,
    load_split,
    pipeline_grad_check,
    prepare_examples,
    train,
)


def _load_config(args):
    config = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    return config.with_overrides(**overrides) if overrides else config


def cmd_gen_data(args):
    config = _load_config(args)
    os.makedirs(config.out_dir, exist_ok=True)
    splits = ["train", "val", "test"] if args.split == "all" else [args.split]
    for split in splits:
        instances = load_split(config.data, split)
        data_path = os.path.join(config.out_dir, f"data_{split}.json")
        features_path = os.path.join(config.out_dir, f"features_{split}.json")
        save_dataset(instances, data_path, features_path, split=split)
        print(f"wrote {len(instances)} dialogues to {data_path}")
    return 0


def cmd_train(args):
    config = _load_config(args)
    result = train(config, log=print)
    print(f"best checkpoint: {result.best_path} (epoch {result.best_epoch})")
    print(f"metrics: {result.metrics_path}")
    return 0


def cmd_eval(args):
    report, _ = evaluate_checkpoint(args.ckpt, split=args.split)
    print(f"split={args.split} rounds={report.rounds}")
    print(
        f"mrr={report.mrr:.4f} r@1={report.r_at_1:.4f} r@5={report.r_at_5:.4f} "
        f"r@10={report.r_at_10:.4f} mean_rank={report.mean_rank:.4f} ndcg={report.ndcg:.4f}"
    )
    return 0


def cmd_ablate(args):
    config = _load_config(args)
    seeds = [int(s) for s in args.seeds.split(",") if s]
    result = ablate(config, seeds, log=print)
    print(result.table_text)
    print(f"tables written under {config.out_dir}")
    return 0


def cmd_rank(args):
    model, vocab, _, config, _ = load_model(args.ckpt)
    instances = load_split(config.data, args.split)
    matches = [inst for inst in instances if inst.dialogue_id == args.dialogue]
    if not matches:
        print(f"dialogue {args.dialogue} not found in split {args.split}", file=sys.stderr)
        return 1
    instance = matches[0]
    examples = prepare_examples([instance], vocab, config.text)
    ex = examples[args.round]
    from .tensor import no_grad

    with no_grad():
        emb, _ = model.encode_round(ex.features, ex.caption_ids, ex.history, ex.question_ids)
        ranking = model.decoder.rank_candidates(emb, ex.candidate_ids, ex.gt_index)
        scores = model.decoder.score_candidates(emb, ex.candidate_ids)
    cands = instance.rounds[args.round].candidates.candidates
    print(f"question: {instance.rounds[args.round].question}")
    for place, idx in enumerate(ranking.order, start=1):
        marker = " <- human answer" if idx == ex.gt_index else ""
        print(f"{place:3d}. {scores[idx].total:+9.3f}  {cands[idx]}{marker}")
    print(f"human answer ranked {ranking.gt_rank} of {len(cands)}")
    return 0


def cmd_dump_attn(args):
    model, vocab, _, config, _ = load_model(args.ckpt)
    instances = load_split(config.data, args.split)
    matches = [inst for inst in instances if inst.dialogue_id == args.dialogue]
    if not matches:
        print(f"dialogue {args.dialogue} not found in split {args.split}", file=sys.stderr)
        return 1
    payload = dump_attention(model, vocab, config.text, matches[0])
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out_file:
        with open(args.out_file, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {args.out_file}")
    else:
        print(text)
    return 0


def cmd_chat(args):
    model, vocab, _, config, _ = load_model(args.ckpt)
    instances = load_split(config.data, args.split)
    matches = [inst for inst in instances if inst.dialogue_id == args.dialogue]
    if not matches:
        print(f"dialogue {args.dialogue} not found in split {args.split}", file=sys.stderr)
        return 1
    return chat_loop(model, vocab, config.text, matches[0])


def cmd_gradcheck(args):
    worst_primitive = 0.0
    rng = np.random.default_rng(0)
    cases = {
        "matmul": lambda ls: tsum(T.matmul(ls[0], T.transpose(ls[1]))),
        "tanh": lambda ls: tsum(T.tanh(ls[0])),
        "sigmoid": lambda ls: tsum(T.sigmoid(ls[0])),
        "softmax": lambda ls: tsum(
            T.mul(T.softmax(T.reshape(ls[0], (-1,))), T.softmax(T.reshape(ls[1], (-1,))))
        ),
        "mul": lambda ls: tsum(T.mul(ls[0], ls[1])),
    }
    for name, fn in cases.items():
        point = [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))]
        err = grad_check(fn, point, epsilon=1e-5)
        worst_primitive = max(worst_primitive, err)
        print(f"primitive {name:10s} max rel err {err:.3e}")
    worst_pipeline = 0.0
    for seed in range(args.seeds):
        err = pipeline_grad_check(seed)
        worst_pipeline = max(worst_pipeline, err)
        print(f"pipeline seed {seed}: max rel err {err:.3e}")
    ok = worst_primitive < 1e-4 and worst_pipeline < 1e-4
    print(f"worst primitive {worst_primitive:.3e}, worst pipeline {worst_pipeline:.3e}")
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="minivd",
        description="generative visual dialogue on a synthetic grid world",
    )
    parser.add_argument("--config", help="JSON run-config file")
    parser.add_argument("--seed", type=int, help="override config seed")
    parser.add_argument("--out", help="override config output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write VisDial-format dataset files")
    p.add_argument("--split", default="all", choices=["train", "val", "test", "all"])
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model per the run config")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="matched MLE-vs-WLE comparison over seeds")
    p.add_argument("--seeds", default="1,2,3", help="comma-separated seed list")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("rank", help="rank one round's candidate responses")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dialogue", type=int, required=True)
    p.add_argument("--round", type=int, default=0)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.set_defaults(fn=cmd_rank)

    p = sub.add_parser("dump-attn", help="dump per-step attention vectors as JSON")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dialogue", type=int, required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--out-file")
    p.set_defaults(fn=cmd_dump_attn)

    p = sub.add_parser("chat", help="interactive questions about one scene")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dialogue", type=int, required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.set_defaults(fn=cmd_chat)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seeds", type=int, default=10)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
