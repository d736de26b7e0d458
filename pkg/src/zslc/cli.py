"""Command-line entry points: synth-data, train, eval, sweep, plot.

Every run echoes its effective configuration into the output directory;
rerunning from that echo reproduces the results bit-exactly.
Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import chart
from . import config as cf
from . import data as dt
from . import engine as en
from . import losses as ls
from . import networks as nets
from . import recognition as rec
from . import trainer as tr

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

LOG_NAME = "loss_log.jsonl"
CKPT_NAME = "checkpoint.zslc"
CONFIG_ECHO = "effective.cfg"
TERM_NAMES = ("wgan1", "wgan2", "joint_d3", "joint_max", "cls", "align", "total")


def _resolve_dataset(cfg: cf.RunConfig) -> dt.GzslDataset:
    if cfg.features:
        ds = dt.load_dataset(cfg.features, cfg.attributes, cfg.splits)
    else:
        ds = dt.generate_synthetic(dt.SynthSpec(
            n_seen=cfg.n_seen, n_unseen=cfg.n_unseen, d_x=cfg.d_x, d_h=cfg.d_h,
            train_per_class=cfg.train_per_class, test_per_class=cfg.test_per_class,
            sigma=cfg.sigma, seed=cfg.seed))
    return dt.normalize_features(ds, cfg.normalize)


def _hyper(cfg: cf.RunConfig) -> ls.HyperParams:
    return ls.HyperParams(
        beta=cfg.beta, gp_lambda=cfg.gp_lambda, gamma=cfg.gamma,
        alpha1=cfg.alpha1, alpha2=cfg.alpha2, epsilon=cfg.epsilon,
        n_critic=cfg.n_critic, lr=cfg.lr, adam_beta1=cfg.adam_beta1,
        adam_beta2=cfg.adam_beta2, adam_eps=cfg.adam_eps,
        batch_size=cfg.batch_size, epochs=cfg.epochs, n_syn=cfg.n_syn,
        seed=cfg.seed)


def _net(cfg: cf.RunConfig, ds: dt.GzslDataset) -> nets.NetConfig:
    return nets.NetConfig(d_x=ds.d_x, d_h=ds.d_h, d_z=cfg.d_z or None,
                          hidden=cfg.hidden, leaky_slope=cfg.leaky_slope)


def _echo_config(cfg: cf.RunConfig, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_ECHO).write_text(cf.format_config(cfg), encoding="utf-8")


def cmd_synth_data(cfg: cf.RunConfig, force: bool = False) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "features.csv", out / "attributes.csv", out / "splits.json"]
    existing = [p for p in paths if p.exists()]
    if existing and not force:
        print(f"refusing to overwrite {existing[0]} (use --force)", file=sys.stderr)
        return EXIT_DATA
    ds = dt.generate_synthetic(dt.SynthSpec(
        n_seen=cfg.n_seen, n_unseen=cfg.n_unseen, d_x=cfg.d_x, d_h=cfg.d_h,
        train_per_class=cfg.train_per_class, test_per_class=cfg.test_per_class,
        sigma=cfg.sigma, seed=cfg.seed))
    dt.save_dataset(ds, *paths)
    _echo_config(cfg, out)
    print(f"wrote {len(ds.features)} samples, {len(ds.attributes)} classes to {out}")
    return EXIT_OK


def cmd_train(cfg: cf.RunConfig, resume: str = None) -> int:
    out = Path(cfg.out)
    _echo_config(cfg, out)
    ds = _resolve_dataset(cfg)
    effective = cf.apply_ablation(cfg)
    hp = _hyper(effective)
    state = tr.load_checkpoint(resume) if resume else None
    if state is not None and state.hp.seed != hp.seed:
        raise cf.ConfigError("resume checkpoint was trained with a different seed")
    if state is not None:
        state.hp = hp
    ckpt = out / CKPT_NAME
    with open(out / LOG_NAME, "a" if resume else "w", encoding="utf-8") as log:
        def log_fn(report):
            log.write(json.dumps(report.to_dict(), sort_keys=True) + "\n")

        state, _ = tr.fit(ds, hp, _net(effective, ds), ablation=cfg.ablation,
                          state=state, log_fn=log_fn, checkpoint_path=ckpt,
                          checkpoint_every=cfg.checkpoint_every,
                          pretrain_epochs=cfg.pretrain_epochs,
                          pretrain_lr=cfg.pretrain_lr)
    print(f"trained {state.epoch} epochs ({state.step} steps); checkpoint at {ckpt}")
    return EXIT_OK


def _evaluate(cfg: cf.RunConfig, state: tr.TrainState, ds: dt.GzslDataset) -> rec.GzslMetrics:
    if state.net.d_x != ds.d_x or state.net.d_h != ds.d_h:
        raise en.ShapeError(
            f"checkpoint dims ({state.net.d_x},{state.net.d_h}) vs dataset ({ds.d_x},{ds.d_h})")
    synth_x, synth_y = rec.synthesize_unseen(
        state.models["generator"], ds.attributes, ds.unseen_classes,
        cfg.n_syn, en.RngStream(cfg.seed, "rec/noise"))
    i_model = state.models["inference"] if cf.wants_latent_augmentation(state.ablation) else None
    table = rec.build_recognition_set(ds, synth_x, synth_y, i_model)
    class_ids = sorted(set(ds.seen_classes.tolist()) | set(ds.unseen_classes.tolist()))
    recognizer = rec.train_recognizer(table, class_ids, cfg.rec_epochs, cfg.rec_lr,
                                      en.RngStream(cfg.seed, "rec/shuffle"))
    return rec.evaluate_gzsl(recognizer, i_model, ds)


def cmd_eval(cfg: cf.RunConfig, checkpoint: str) -> int:
    out = Path(cfg.out)
    _echo_config(cfg, out)
    ds = _resolve_dataset(cfg)
    state = tr.load_checkpoint(checkpoint)
    metrics = _evaluate(cfg, state, ds)
    with open(out / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(metrics.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    (out / "metrics.csv").write_text("U,S,H\n" + metrics.csv_row() + "\n", encoding="utf-8")
    print(f"U={metrics.unseen_acc:.2f} S={metrics.seen_acc:.2f} H={metrics.harmonic:.2f}")
    return EXIT_OK


SWEEP_AXES = ("alpha1", "alpha2", "gamma", "n_syn")


def cmd_sweep(cfg: cf.RunConfig, axis: str, values) -> int:
    if axis not in SWEEP_AXES:
        raise cf.ConfigError(f"sweep axis must be one of {SWEEP_AXES}")
    if len(values) < 2:
        raise cf.ConfigError("need at least 2 sweep values")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in values:
        cell_value = int(value) if axis == "n_syn" else float(value)
        cell_cfg = cf.build_config(
            {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cf.RunConfig)},
            {axis: cell_value, "out": str(out / f"{axis}_{value}")})
        try:
            code = cmd_train(cell_cfg)
            if code != EXIT_OK:
                raise RuntimeError(f"train exited {code}")
            ds = _resolve_dataset(cell_cfg)
            state = tr.load_checkpoint(Path(cell_cfg.out) / CKPT_NAME)
            metrics = _evaluate(cell_cfg, state, ds)
            rows.append((cell_value, metrics.unseen_acc, metrics.seen_acc, metrics.harmonic))
        except (cf.ConfigError, dt.DataFormatError, en.NumericalError, en.ShapeError,
                OSError, RuntimeError, ValueError) as e:
            print(f"sweep cell {axis}={value} failed: {e}", file=sys.stderr)
            rows.append((cell_value, None, None, None))
    lines = ["value,U,S,H"]
    for value, u, s, h in rows:
        if u is None:
            lines.append(f"{value},,,failed")
        else:
            lines.append(f"{value},{u!r},{s!r},{h!r}")
    (out / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    good = [(v, h) for v, _, _, h in rows if h is not None]
    if good:
        svg = chart.line_chart([("H", [v for v, _ in good], [h for _, h in good])],
                               f"harmonic mean vs {axis}", axis, "H")
        (out / "sweep.svg").write_text(svg, encoding="utf-8")
    print(f"sweep over {axis} done: {sum(1 for r in rows if r[1] is not None)}/{len(rows)} cells ok")
    return EXIT_OK


def cmd_plot(log_path: str, out_path: str) -> int:
    lines = Path(log_path).read_text(encoding="utf-8").splitlines()
    records = [json.loads(line) for line in lines if line.strip()]
    if not records:
        raise dt.DataFormatError(f"{log_path}: empty loss log")
    series = []
    for name in TERM_NAMES:
        xs, ys = [], []
        missing = 0
        for r in records:
            if name not in r:
                missing += 1
                continue
            xs.append(float(r.get("step", len(xs))))
            ys.append(float(r[name]))
        if missing:
            print(f"warning: {missing} log lines missing term {name!r}; skipped",
                  file=sys.stderr)
        if xs:
            series.append((name, xs, ys))
    svg = chart.line_chart(series, "training loss terms", "step", "value")
    Path(out_path).write_text(svg, encoding="utf-8")
    print(f"wrote {out_path}")
    return EXIT_OK


def _common_flags(sub):
    sub.add_argument("--config", help="flat key = value config file")
    sub.add_argument("--preset", choices=sorted(cf.PRESETS))
    sub.add_argument("--ablation", choices=cf.ABLATIONS)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--out")


def _build(args) -> cf.RunConfig:
    overrides = {k: getattr(args, k, None) for k in ("preset", "ablation", "seed", "out")}
    if args.config:
        return cf.load_config(args.config, overrides)
    return cf.build_config({}, overrides)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="zslc",
                                     description="two-level adversarial visual-semantic "
                                                 "coupling for generalized zero-shot learning")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic dataset on disk")
    _common_flags(p)
    p.add_argument("--force", action="store_true", help="overwrite existing files")

    p = sub.add_parser("train", help="train the full model")
    _common_flags(p)
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _common_flags(p)
    p.add_argument("checkpoint")

    p = sub.add_parser("sweep", help="train/eval over one hyperparameter axis")
    _common_flags(p)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True,
                   help="comma-separated values, e.g. 0,50,200")

    p = sub.add_parser("plot", help="render a loss log as an SVG chart")
    p.add_argument("log")
    p.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    try:
        if args.command == "synth-data":
            return cmd_synth_data(_build(args), force=args.force)
        if args.command == "train":
            return cmd_train(_build(args), resume=args.resume)
        if args.command == "eval":
            return cmd_eval(_build(args), args.checkpoint)
        if args.command == "sweep":
            values = [v for v in args.values.split(",") if v != ""]
            return cmd_sweep(_build(args), args.axis, values)
        if args.command == "plot":
            return cmd_plot(args.log, args.out)
        raise cf.ConfigError(f"unknown command {args.command!r}")
    except cf.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (dt.DataFormatError, en.ShapeError, FileNotFoundError, IsADirectoryError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except en.NumericalError as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
