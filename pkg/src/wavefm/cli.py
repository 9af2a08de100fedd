"""Command-line interface.

Every command writes CSV artifacts with a reproducibility header (version,
config hash, seed) and, where the output is a curve or map, a PNG figure
next to the delimited file.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from pathlib import Path

import numpy as np

from . import report
from .data import Dataset, DatasetManifest, generate_dataset, load_dataset
from .model import Model, ModelConfig
from .pretrain import Trainer, TrainState, load_model_from_checkpoint
from .precoding import su_exhaustive, su_snr_param
from .probes import (
    PartialCsiSpec,
    embed_dataset,
    mu_oracle_labels,
    su_oracle_labels,
)
from .profiles import get_profile
from .spectra import dft_codebook, spatial_spectrum
from .tasks import localization_experiment, mu_experiment, su_experiment
from .tensor import GRAD_CHECK_OPS, grad_check


def _args_hash(args, keys):
    text = "|".join(f"{k}={getattr(args, k)}" for k in sorted(keys))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args):
    dataset = load_dataset(args.data)
    return dataset


def _model_for(dataset: Dataset, checkpoint):
    config = ModelConfig.from_profile(dataset.profile)
    return load_model_from_checkpoint(checkpoint, config)


def cmd_gen_data(args):
    manifest = DatasetManifest(
        profile=args.profile,
        scene_count=args.scenes,
        samples_per_scene=args.users,
        seed=args.seed,
        density=args.density,
        n_rx=args.n_rx,
    )
    dataset = generate_dataset(manifest, args.out)
    print(
        f"wrote {len(dataset)} samples across {manifest.scene_count} scenes "
        f"to {args.out} (config hash {manifest.config_hash()})"
    )


def cmd_pretrain(args):
    dataset = _load(args)
    if args.profile == "paper":
        print(
            "warning: paper profile pretrains a 2.4M-parameter model on the "
            "CPU engine; expect hours, not minutes",
            file=sys.stderr,
        )
    config = ModelConfig.from_profile(dataset.profile)
    model = Model(config, seed=args.seed)
    trainer = Trainer(
        dataset, model, lr=args.lr, batch_size=args.batch_size, seed=args.seed
    )
    out = _out_dir(args)
    state = TrainState(epoch=0, step=0)
    if args.resume:
        state = trainer.load_checkpoint(args.resume)
        print(f"resuming from epoch {state.epoch}")
    state = trainer.run(
        args.epochs, state=state, out_dir=out, checkpoint_every=args.checkpoint_every
    )
    epochs = sorted({r["epoch"] for r in state.log_rows})
    curve = [
        {
            "epoch": e,
            **{
                k: float(np.mean([r[k] for r in state.log_rows if r["epoch"] == e]))
                for k in ("csi", "loc", "occ", "spec", "total")
            },
        }
        for e in epochs
    ]
    report.save_training_curve(out / "training_curve.png", curve)
    final = out / f"checkpoint_ep{state.epoch:04d}.wfmc"
    print(f"trained to epoch {state.epoch}; checkpoint {final}")


def cmd_probe(args):
    dataset = _load(args)
    model = _model_for(dataset, args.checkpoint)
    out = _out_dir(args)
    header = report.repro_header(
        dataset.manifest.config_hash(), args.seed, checkpoint=args.checkpoint
    )
    seeds = [int(s) for s in args.seeds.split(",")]
    if args.task == "loc":
        budgets = [int(x) for x in args.labels.split(",")]
        rows = localization_experiment(
            model, dataset, budgets, seeds, snr_db=args.snr,
            probe_kind=args.head, split_seed=args.seed,
        )
        report.write_csv(
            out / "localization_sweep.csv", header,
            ["method", "labels", "seed", "median_error_m"], rows,
        )
        series = {}
        for method in ("physc", "raw-csi"):
            series[method] = [
                float(np.mean([r[3] for r in rows if r[0] == method and r[1] == b]))
                for b in budgets
            ]
        report.save_sweep_plot(
            out / "localization_sweep.png", budgets, series,
            "training labels", "median error (m)", logx=True,
        )
        print(f"localization sweep written to {out}")
    else:
        ratios = [float(x) for x in args.ratios.split(",")]
        acc_rows, rate_rows, ecdfs = mu_experiment(
            model, dataset, ratios, seeds, snr_db=args.snr, split_seed=args.seed,
        )
        report.write_csv(
            out / "mu_beam_accuracy.csv", header,
            ["method", "ratio", "seed", "top1", "top5"], acc_rows,
        )
        report.write_csv(
            out / "mu_rate_ratio.csv", header,
            ["method", "ratio", "seed", "mean_ratio_vs_oracle"], rate_rows,
        )
        series = {}
        for method in ("physc", "raw-csi"):
            series[method] = [
                float(np.mean([r[4] for r in acc_rows if r[0] == method and r[1] == q]))
                for q in ratios
            ]
        report.save_sweep_plot(
            out / "mu_beam_accuracy.png", ratios, series,
            "training ratio", "top-5 accuracy",
        )
        report.save_ecdf_plot(out / "mu_rate_ecdf.png", ecdfs)
        print(f"multi-user probe sweep written to {out}")


def cmd_eval_loc(args):
    dataset = _load(args)
    model = _model_for(dataset, args.checkpoint)
    out = _out_dir(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = localization_experiment(
        model, dataset, [args.labels], seeds, snr_db=args.snr,
        probe_kind=args.head, split_seed=args.seed,
    )
    header = report.repro_header(
        dataset.manifest.config_hash(), args.seed,
        checkpoint=args.checkpoint, snr_db=args.snr, labels=args.labels,
    )
    report.write_csv(
        out / "localization_eval.csv", header,
        ["method", "labels", "seed", "median_error_m"], rows,
    )
    for method in ("physc", "raw-csi"):
        vals = [r[3] for r in rows if r[0] == method]
        print(f"{method}: median error {np.mean(vals):.2f} m over {len(vals)} seeds")


def cmd_eval_mu(args):
    dataset = _load(args)
    model = _model_for(dataset, args.checkpoint)
    out = _out_dir(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    ratios = [float(x) for x in args.ratios.split(",")]
    acc_rows, rate_rows, ecdfs = mu_experiment(
        model, dataset, ratios, seeds, snr_db=args.snr, split_seed=args.seed,
    )
    header = report.repro_header(
        dataset.manifest.config_hash(), args.seed,
        checkpoint=args.checkpoint, snr_db=args.snr, power=1.0,
    )
    ecdf_rows = []
    for label, table in ecdfs.items():
        ecdf_rows.extend([label, f"{v:.6e}", f"{p:.6f}"] for v, p in table.rows())
    report.write_csv(
        out / "mu_rate_ecdf.csv", header, ["method", "sum_rate", "cdf"], ecdf_rows
    )
    report.write_csv(
        out / "mu_beam_accuracy.csv", header,
        ["method", "ratio", "seed", "top1", "top5"], acc_rows,
    )
    report.write_csv(
        out / "mu_rate_ratio.csv", header,
        ["method", "ratio", "seed", "mean_ratio_vs_oracle"], rate_rows,
    )
    report.save_ecdf_plot(out / "mu_rate_ecdf.png", ecdfs)
    for row in rate_rows:
        if row[0] in ("oracle", "random"):
            print(f"{row[0]} mean rate ratio: {row[3]:.4f}")
    print(f"multi-user evaluation written to {out}")


def cmd_eval_su(args):
    dataset = _load(args)
    model = _model_for(dataset, args.checkpoint)
    out = _out_dir(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = su_experiment(
        model, dataset, args.train_count, seeds, snr_db=args.snr,
        epochs=args.epochs, split_seed=args.seed,
    )
    header = report.repro_header(
        dataset.manifest.config_hash(), args.seed,
        checkpoint=args.checkpoint, snr_db=args.snr,
    )
    report.write_csv(
        out / "su_eval.csv", header,
        ["seed", "tx_pair_acc", "rx_pair_acc", "joint_acc", "mean_rate_ratio"],
        rows,
    )
    for row in rows:
        print(
            f"seed {row[0]}: tx {row[1]:.3f} rx {row[2]:.3f} joint {row[3]:.3f} "
            f"rate ratio {row[4]:.3f}"
        )


def cmd_oracle_labels(args):
    dataset = _load(args)
    out = _out_dir(args)
    profile = dataset.profile
    header = report.repro_header(
        dataset.manifest.config_hash(), args.seed, task=args.task
    )
    indices = list(range(len(dataset)))
    if args.task == "mu-beam":
        codebook = dft_codebook(profile.array_nx, profile.array_ny)
        labels = mu_oracle_labels(dataset, indices, codebook)
        rows = [[i, labels[i]] for i in indices]
        report.write_csv(out / "labels_mu.csv", header, ["sample_id", "beam"], rows)
    elif args.task == "su-pair":
        cb_tx = dft_codebook(profile.array_nx, profile.array_ny)
        cb_rx = dft_codebook(profile.su_rx_antennas, 1)
        labels = su_oracle_labels(
            dataset, indices, cb_tx, cb_rx, profile.su_streams, args.snr
        )
        rows = []
        for i in indices:
            (t0, t1), (r0, r1) = labels[i]
            h = dataset.samples[i].H
            sol = su_exhaustive(
                h, cb_tx, cb_rx, profile.su_streams, su_snr_param(h, args.snr)
            )
            rows.append([i, t0, t1, r0, r1, f"{sol.objective:.6e}"])
        report.write_csv(
            out / "labels_su.csv", header,
            ["sample_id", "tx0", "tx1", "rx0", "rx1", "oracle_rate"], rows,
        )
    else:  # location
        rows = [
            [i, f"{s.rx_position[0]:.6f}", f"{s.rx_position[1]:.6f}"]
            for i, s in enumerate(dataset.samples)
        ]
        report.write_csv(
            out / "labels_location.csv", header, ["sample_id", "x_m", "y_m"], rows
        )
    print(f"oracle labels written to {out}")


def cmd_dump_attn(args):
    dataset = _load(args)
    model = _model_for(dataset, args.checkpoint)
    out = _out_dir(args)
    from .probes import features_for_sample

    feats = features_for_sample(model, dataset, args.sample)
    grids = model.attention_maps(feats)
    header = report.repro_header(
        dataset.manifest.config_hash(), args.seed,
        checkpoint=args.checkpoint, sample=args.sample,
    )
    rows = []
    for layer, grid in enumerate(grids):
        for r in range(grid.shape[0]):
            rows.append([layer, r] + [f"{v:.6f}" for v in grid[r]])
    report.write_csv(
        out / "attention_maps.csv", header,
        ["layer", "row"] + [f"c{c}" for c in range(grids[0].shape[1])], rows,
    )
    report.save_heatmap_row(
        out / "attention_maps.png", grids,
        titles=[f"layer {i}" for i in range(len(grids))],
    )
    print(f"attention maps for sample {args.sample} written to {out}")


def cmd_codebook(args):
    out = _out_dir(args)
    codebook = dft_codebook(args.nx, args.ny)
    header = report.repro_header(_args_hash(args, ("nx", "ny")), args.seed,
                                 nx=args.nx, ny=args.ny)
    rows = []
    for j in range(codebook.size):
        kx, ky = codebook.index_to_pair(j)
        entries = np.empty(2 * codebook.num_antennas)
        entries[0::2] = codebook.beams[j].real
        entries[1::2] = codebook.beams[j].imag
        rows.append([j, kx, ky] + [f"{v:.8f}" for v in entries])
    columns = ["beam", "k_x", "k_y"]
    for t in range(codebook.num_antennas):
        columns += [f"re{t}", f"im{t}"]
    report.write_csv(out / f"codebook_{args.nx}x{args.ny}.csv", header, columns, rows)
    print(f"codebook ({codebook.size} beams) written to {out}")


def cmd_spectrum(args):
    dataset = _load(args)
    out = _out_dir(args)
    profile = dataset.profile
    sample = dataset.samples[args.sample]
    h = sample.H[0].conj() / dataset.manifest.csi_rms
    s = spatial_spectrum(h, profile.array_nx, profile.array_ny)
    header = report.repro_header(
        dataset.manifest.config_hash(), args.seed, sample=args.sample
    )
    rows = []
    for j, value in enumerate(s):
        kx, ky = divmod(j, profile.array_ny)
        db = 10.0 * np.log10(max(value, 1e-12))
        rows.append([j, kx, ky, f"{value:.6e}", f"{db:.3f}"])
    report.write_csv(
        out / "spectrum.csv", header,
        ["bin", "k_x", "k_y", "linear", "db"], rows,
    )
    report.save_heatmap(
        out / "spectrum.png", s.reshape(profile.array_nx, profile.array_ny),
        title=f"spatial spectrum, sample {args.sample}",
    )
    print(f"spectrum for sample {args.sample} written to {out}")


def cmd_grad_check(args):
    out = _out_dir(args)
    rows = []
    worst = 0.0
    for op in GRAD_CHECK_OPS:
        errs = [grad_check(op, seed) for seed in range(args.seeds)]
        rows.append([op, f"{max(errs):.3e}"])
        worst = max(worst, max(errs))
        print(f"{op:16s} max rel err {max(errs):.3e}")
    header = report.repro_header(_args_hash(args, ("seeds",)), args.seed)
    report.write_csv(out / "grad_check.csv", header, ["op", "max_rel_err"], rows)
    print(f"worst case {worst:.3e} ({'OK' if worst < 1e-5 else 'FAIL'})")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="wavefm",
        description="physics-guided multi-modal CSI model: data, pretraining, tasks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False, checkpoint=False):
        p.add_argument("--profile", default="desk", choices=("desk", "paper"))
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="out")
        if data:
            p.add_argument("--data", required=True, help="dataset directory")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="WFMC checkpoint path")

    p = sub.add_parser("gen-data", help="generate scenes and channel shards")
    common(p)
    p.add_argument("--scenes", type=int, default=20)
    p.add_argument("--users", type=int, default=32)
    p.add_argument("--density", type=float, default=0.25)
    p.add_argument("--n-rx", type=int, default=1)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="self-supervised pretraining")
    common(p, data=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--checkpoint-every", type=int, default=10)
    p.add_argument("--resume", default=None)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("probe", help="linear-probe sweeps on a checkpoint")
    common(p, data=True, checkpoint=True)
    p.add_argument("--task", choices=("loc", "mu-beam"), required=True)
    p.add_argument("--labels", default="50,100,200", help="loc label budgets")
    p.add_argument("--ratios", default="0.1,0.5,1.0", help="mu training ratios")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--snr", type=float, default=10.0)
    p.add_argument("--head", default="linear", choices=("linear", "mlp"))
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("eval-loc", help="localization at one label budget")
    common(p, data=True, checkpoint=True)
    p.add_argument("--labels", type=int, default=200)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--snr", type=float, default=10.0)
    p.add_argument("--head", default="linear", choices=("linear", "mlp"))
    p.set_defaults(func=cmd_eval_loc)

    p = sub.add_parser("eval-mu", help="multi-user beam task evaluation")
    common(p, data=True, checkpoint=True)
    p.add_argument("--ratios", default="0.1,0.5,1.0")
    p.add_argument("--seeds", default="0")
    p.add_argument("--snr", type=float, default=10.0)
    p.set_defaults(func=cmd_eval_mu)

    p = sub.add_parser("eval-su", help="single-user fine-tune evaluation")
    common(p, data=True, checkpoint=True)
    p.add_argument("--train-count", type=int, default=64)
    p.add_argument("--epochs", type=int, default=4)
    p.add_argument("--seeds", default="0")
    p.add_argument("--snr", type=float, default=10.0)
    p.set_defaults(func=cmd_eval_su)

    p = sub.add_parser("oracle-labels", help="exhaustive-search labels")
    common(p, data=True)
    p.add_argument("--task", choices=("mu-beam", "su-pair", "location"), required=True)
    p.add_argument("--snr", type=float, default=10.0)
    p.set_defaults(func=cmd_oracle_labels)

    p = sub.add_parser("dump-attn", help="aggregator attention over scene tokens")
    common(p, data=True, checkpoint=True)
    p.add_argument("--sample", type=int, default=0)
    p.set_defaults(func=cmd_dump_attn)

    p = sub.add_parser("codebook", help="dump a DFT beam codebook")
    common(p)
    p.add_argument("--nx", type=int, default=8)
    p.add_argument("--ny", type=int, default=8)
    p.set_defaults(func=cmd_codebook)

    p = sub.add_parser("spectrum", help="spatial spectrum of one sample")
    common(p, data=True)
    p.add_argument("--sample", type=int, default=0)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("grad-check", help="finite-difference check of every op")
    common(p)
    p.add_argument("--seeds", type=int, default=10)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
