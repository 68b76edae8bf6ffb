"""Command-line surface: generate data, train, simulate, evaluate, inspect.

Checkpoints are ParamSet containers; the model configuration and training
method ride along in a ``<ckpt>.meta.json`` sidecar so `simulate` and
`evaluate` can rebuild the exact network. The default data directory can be
set with the ``BINDMD_DATA_DIR`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import data as dio
from . import training as tr
from .autodiff import ParamSet
from .forcenet import BindingForceModel, ModelConfig


def _default_data_dir() -> str:
    return os.environ.get("BINDMD_DATA_DIR", ".")


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _pick(doc: dict, cls):
    allowed = {f.name for f in fields(cls)}
    unknown = set(doc) - allowed
    if unknown:
        raise ValueError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**doc)


def _meta_path(ckpt: str) -> str:
    return str(ckpt) + ".meta.json"


def _save_checkpoint(ckpt: str, params: ParamSet, model_cfg: ModelConfig,
                     method: str) -> None:
    params.save(ckpt)
    with open(_meta_path(ckpt), "w") as fh:
        json.dump({"model": asdict(model_cfg), "method": method}, fh,
                  sort_keys=True)
        fh.write("\n")


def _load_checkpoint(ckpt: str):
    if not Path(ckpt).exists():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    params = ParamSet.load(ckpt)
    meta = _meta_path(ckpt)
    if Path(meta).exists():
        doc = _load_json(meta)
        model_cfg = _pick(doc.get("model", {}), ModelConfig)
        method = doc.get("method", "neuralmd-ode")
    else:
        model_cfg, method = ModelConfig(), "neuralmd-ode"
    return params, model_cfg, method


def _load_dir(data_dir: str):
    paths = sorted(Path(data_dir).glob("*.json"))
    paths = [p for p in paths if not p.name.endswith(".meta.json")
             and not p.name.endswith(".report.json")]
    records = []
    for p in paths:
        try:
            records.append(dio.load_complex(p))
        except dio.ComplexFormatError:
            continue  # directories may hold config files too
    if not records:
        raise FileNotFoundError(f"no complex files found in {data_dir}")
    return records


def cmd_gen_synthetic(args) -> int:
    doc = _load_json(args.spec) if args.spec else {}
    if args.seed is not None:
        doc["seed"] = args.seed
    spec = _pick(doc, dio.SyntheticSpec)
    record = dio.generate_synthetic(spec)
    dio.save_complex(record, args.out)
    print(f"wrote {record.id}: {record.ligand.n_atoms} atoms, "
          f"{record.n_snapshots} snapshots -> {args.out}")
    return 0


def cmd_train(args) -> int:
    doc = _load_json(args.config) if args.config else {}
    model_cfg = _pick(doc.get("model", {}), ModelConfig)
    train_doc = dict(doc.get("train", {}))
    train_doc["method"] = args.method
    if args.seed is not None:
        train_doc["seed"] = args.seed
    if isinstance(train_doc.get("langevin"), dict):
        from . import dynamics as dyn
        train_doc["langevin"] = dyn.LangevinConfig(**train_doc["langevin"])
    cfg = _pick(train_doc, tr.TrainConfig)
    records = _load_dir(args.data)
    if args.split == "single":
        if len(records) > 1:
            records = records[:1]
        split = tr.split_single(records[0].n_snapshots)
    else:
        split = tr.split_multi(len(records), seed=cfg.seed)
    model = BindingForceModel(model_cfg)
    result = tr.train_method(args.method, model, records, split, cfg)
    _save_checkpoint(args.out, result.best_params, model_cfg, args.method)
    last = result.train_curve[-1] if result.train_curve else float("nan")
    print(f"trained {args.method} for {len(result.train_curve)} epochs, "
          f"final loss {last:.6f}, best epoch {result.best_epoch} "
          f"-> {args.out}")
    if result.aborted:
        print("warning: training aborted on non-finite loss; checkpoint "
              "holds the best earlier state")
    return 0


def cmd_simulate(args) -> int:
    params, model_cfg, method = _load_checkpoint(args.ckpt)
    record = dio.load_complex(args.complex)
    model = BindingForceModel(model_cfg)
    t_list = [float(t) for t in range(1, args.steps + 1)]
    roll = tr.rollout_method(method, model, record, params, 0, t_list,
                             seed=args.seed or 0)
    traj = np.array([p.data for p in roll.positions])
    if len(traj) == 0:
        print(f"error: rollout aborted immediately at t={roll.abort_time}",
              file=sys.stderr)
        return 1
    out = dio.ComplexRecord(
        id=f"{record.id}-sim", ligand=record.ligand,
        protein=record.protein, trajectory=traj,
        metadata={**record.metadata, "source": f"simulate:{method}",
                  "from": str(args.complex)})
    dio.save_complex(out, args.out)
    status = "aborted early, " if roll.aborted else ""
    print(f"simulated {len(traj)} snapshots ({status}method {method}) "
          f"-> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    params, model_cfg, method = _load_checkpoint(args.ckpt)
    records = _load_dir(args.data)
    model = BindingForceModel(model_cfg)
    if args.split == "single" or len(records) == 1:
        split = tr.split_single(records[0].n_snapshots)
        records = records[:1]
    else:
        split = tr.split_multi(len(records), seed=args.seed or 0)
    report = tr.evaluate(method, model, records, split, params,
                         seed=args.seed or 0)
    report.save(args.report)
    print(report.summary())
    print(f"report -> {args.report}")
    return 0


def cmd_inspect(args) -> int:
    record = dio.load_complex(args.complex)
    traj = record.trajectory
    com = traj.mean(axis=1)
    drift = float(np.linalg.norm(com[-1] - com[0]))
    print(f"id:        {record.id}")
    print(f"atoms:     {record.ligand.n_atoms}")
    print(f"residues:  {record.protein.n_residues}")
    print(f"snapshots: {record.n_snapshots}")
    print(f"velocities stored: {record.velocities is not None}")
    print(f"coordinate range: [{traj.min():.3f}, {traj.max():.3f}] A")
    print(f"ligand-center drift over trajectory: {drift:.3f} A")
    for key in sorted(record.metadata):
        val = record.metadata[key]
        if isinstance(val, (str, int, float, bool)):
            print(f"metadata.{key}: {val}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bindmd",
        description="trajectory-learning dynamics for protein-ligand "
                    "binding")
    parser.add_argument("--seed", type=int, default=None,
                        help="seed overriding config/spec values")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic complex")
    p.add_argument("--spec", help="JSON file of SyntheticSpec fields")
    p.add_argument("--out", required=True, help="output complex file")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("train", help="train a method on a data directory")
    p.add_argument("--method", required=True, choices=tr.METHODS)
    p.add_argument("--data", default=_default_data_dir(),
                   help="directory of complex files")
    p.add_argument("--split", choices=("single", "multi"),
                   default="single")
    p.add_argument("--config", help="JSON with 'model' and 'train' blocks")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", help="roll a checkpoint forward")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--complex", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="score a checkpoint on test data")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", default=_default_data_dir())
    p.add_argument("--split", choices=("single", "multi"),
                   default="single")
    p.add_argument("--report", required=True, help="output report path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect", help="print counts and statistics")
    p.add_argument("--complex", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
