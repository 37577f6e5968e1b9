"""Command-line entry point: ``dysaug <subcommand> ...``.

Exit codes: 0 success, 2 validation error (bad input, config or roster),
1 runtime failure (I/O, corrupt archives, anything unexpected).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from dysaug import __version__
from dysaug.errors import ConfigError, DysaugError, ValidationError

logger = logging.getLogger("dysaug")


def _load_config(args, stage: str):
    from dysaug.training import TrainConfig

    if not args.config:
        raise ConfigError(f"{args.command} needs --config")
    cfg = TrainConfig.from_file(args.config)
    if cfg.stage != stage:
        raise ConfigError(f"{args.config}: stage must be {stage!r}, got {cfg.stage!r}")
    if args.seed is not None:
        cfg.seed = args.seed
    for key in ("manifest", "out_dir"):
        if getattr(cfg, key) is None:
            raise ConfigError(f"{args.config}: {key} is required")
    return cfg


def _phone_list(cfg, manifest) -> list[str]:
    from dysaug.features import phone_inventory, read_alignment

    if cfg.phones:
        return list(cfg.phones)
    paths = [r.phone_alignment_path for r in manifest if r.phone_alignment_path]
    if not paths:
        raise ConfigError("phone supervision needs phone_alignment_path on the records or a phones list")
    return phone_inventory(read_alignment(p) for p in paths)


def _pairs(manifest, targets, loader=None, fbank=None, normalize=True):
    from dysaug.corpus import build_pair_index
    from dysaug.dsp import FbankConfig
    from dysaug.features import build_parallel_pairs

    specs = [p for t in targets for p in build_pair_index(manifest, t)]
    return build_parallel_pairs(specs, loader=loader, fbank=fbank or FbankConfig(), normalize=normalize)


def cmd_synth(args) -> int:
    from dysaug.synthetic import make_synthetic_corpus

    corpus = make_synthetic_corpus(seed=args.seed or 0)
    path = corpus.write(args.out)
    print(path)
    return 0


def cmd_prepare(args) -> int:
    from dysaug.corpus import load_manifest
    from dysaug.features import write_features

    manifest = load_manifest(args.manifest)
    n = write_features(manifest, args.out, normalize=not args.no_normalize)
    print(f"wrote {n} feature archives to {args.out}")
    return 0


def cmd_pair(args) -> int:
    from dysaug.corpus import build_pair_index, load_manifest

    manifest = load_manifest(args.manifest)
    targets = args.targets or manifest.dysarthric_speakers()
    n = 0
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for t in targets:
            for spec in build_pair_index(manifest, t, policy=args.policy):
                fh.write(json.dumps(spec.to_dict(), sort_keys=True) + "\n")
                n += 1
    print(f"wrote {n} pairs to {out}")
    return 0


def cmd_train_init(args) -> int:
    from dysaug.corpus import load_manifest, split_blocks
    from dysaug.features import build_train_utterances
    from dysaug.models import GeneratorModel
    from dysaug.training import train_init

    cfg = _load_config(args, "init")
    manifest = load_manifest(cfg.manifest)
    train_m, _ = split_blocks(manifest)
    flags = cfg.supervision_flags
    phones = _phone_list(cfg, manifest) if flags.phone else None
    utts = build_train_utterances(
        train_m,
        features_dir=cfg.features_dir,
        normalize=cfg.normalize,
        phones=phones,
        use_phones=flags.phone,
        use_ssl=flags.ssl,
    )
    n_phones = len(phones) if phones else cfg.n_phones
    model = GeneratorModel(cfg.variant, manifest.speaker_ids, n_phones=n_phones, hidden_dim=cfg.hidden_dim, seed=cfg.seed)
    res = train_init(model, utts, cfg, out_dir=cfg.out_dir, extra={"phones": phones} if phones else None)
    print(res.checkpoints[-1])
    return 0


def cmd_train_gan(args) -> int:
    from dysaug.checkpoint import load_checkpoint
    from dysaug.corpus import load_manifest, split_blocks
    from dysaug.training import new_discriminators, train_adversarial

    cfg = _load_config(args, "adversarial")
    model, discs, header = load_checkpoint(args.init_ckpt)
    manifest = load_manifest(cfg.manifest)
    train_m, _ = split_blocks(manifest)
    targets = cfg.targets or manifest.dysarthric_speakers()
    discs.update(new_discriminators([t for t in targets if t not in discs], cfg.seed))
    pairs = _pairs(train_m, targets, normalize=cfg.normalize)
    held_m = manifest.filter(lambda r: r.block == 2)
    heldout = _pairs(held_m, targets, normalize=cfg.normalize) if len(held_m) else None
    phones = header.get("extra", {}).get("phones")
    res = train_adversarial(
        model,
        {t: discs[t] for t in targets},
        pairs,
        cfg,
        heldout=heldout,
        out_dir=cfg.out_dir,
        extra={"phones": phones} if phones else None,
    )
    print(res.checkpoints[-1])
    return 0


def cmd_generate(args) -> int:
    from dysaug.augment import generate_corpus
    from dysaug.checkpoint import load_checkpoint
    from dysaug.corpus import load_manifest, split_blocks

    model, _, _ = load_checkpoint(args.ckpt)
    manifest = load_manifest(args.manifest)
    if not args.all_blocks:
        manifest, _ = split_blocks(manifest)
    targets = [t for t in (args.targets or "").split(",") if t]
    corpus = generate_corpus(
        model,
        manifest,
        targets,
        args.ctrl_mult,
        args.dys_mult,
        args.out,
        seed=args.seed or 0,
        sample=args.sample,
    )
    print(f"{len(corpus)} archives, {corpus.total_hours:.4f} h -> {corpus.manifest_path}")
    return 0


def cmd_eval(args) -> int:
    from dysaug.checkpoint import load_checkpoint
    from dysaug.corpus import load_manifest, split_blocks
    from dysaug.evaluate import evaluate
    from dysaug.features import build_train_utterances

    model, discs, header = load_checkpoint(args.ckpt)
    manifest = load_manifest(args.manifest)
    train_m, _ = split_blocks(manifest)
    held_m = manifest.filter(lambda r: r.block == 2)
    targets = [t for t in manifest.dysarthric_speakers() if t in discs]
    if not targets:
        raise ConfigError(f"{args.ckpt} holds no discriminator for this manifest's dysarthric speakers")
    heldout = _pairs(held_m, targets)
    phones = header.get("extra", {}).get("phones")
    use_phones = bool(phones) and all(r.phone_alignment_path for r in manifest)
    probe_kw = dict(phones=phones, use_phones=use_phones)
    report = evaluate(
        model,
        discs,
        heldout,
        probe_train=build_train_utterances(train_m, **probe_kw),
        probe_test=build_train_utterances(held_m, **probe_kw),
        speaker_bands={s.speaker_id: s.intelligibility_band or "unknown" for s in manifest.speakers},
        seed=args.seed or 0,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "a", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    print(report.to_json())
    return 0


def cmd_plot(args) -> int:
    from dysaug.archive import read_dafa
    from dysaug.evaluate import plot_comparison, plot_features, plot_metrics
    from dysaug.training import read_metrics

    src = Path(args.input)
    if args.compare:
        plot_comparison(read_dafa(src), read_dafa(args.compare), args.out)
    elif src.suffix == ".dafa":
        plot_features(read_dafa(src), args.out, title=src.stem)
    else:
        plot_metrics(read_metrics(src), args.out, keys=args.keys.split(",") if args.keys else None)
    print(args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dysaug", description="VAE-GAN dysarthric speech feature augmentation")
    p.add_argument("--version", action="version", version=f"dysaug {__version__}")
    p.add_argument("--seed", type=int, default=None, help="override the seed")
    p.add_argument("--config", default=None, help="training config (YAML/JSON)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(fn=fn)
        return sp

    sp = add("synth", cmd_synth, "write the synthetic 4-speaker corpus")
    sp.add_argument("--out", required=True)

    sp = add("prepare", cmd_prepare, "compute FBank archives for every manifest record")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--no-normalize", action="store_true")

    sp = add("pair", cmd_pair, "build the control/dysarthric pair index")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--targets", nargs="*")
    sp.add_argument("--policy", default="round_robin", choices=["round_robin", "cross"])
    sp.add_argument("--out", required=True)

    for name, fn, help_ in (
        ("train-init", cmd_train_init, "stage 1: VAE initialisation"),
        ("train-gan", cmd_train_gan, "stage 2: adversarial training"),
    ):
        sp = add(name, fn, help_)
        sp.add_argument("--config", default=argparse.SUPPRESS)
        if name == "train-gan":
            sp.add_argument("--init-ckpt", required=True)

    sp = add("generate", cmd_generate, "write augmented feature archives")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--targets", default="")
    sp.add_argument("--ctrl-mult", type=int, choices=[1, 2], default=1)
    sp.add_argument("--dys-mult", type=int, choices=[0, 2], default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--sample", action="store_true", help="sample latents instead of using posterior means")
    sp.add_argument("--all-blocks", action="store_true", help="use every block, not only training blocks")

    sp = add("eval", cmd_eval, "intrinsic evaluation report")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)

    sp = add("plot", cmd_plot, "loss curves or feature heatmaps")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--compare", default=None, help="second archive for a side-by-side plot")
    sp.add_argument("--keys", default=None, help="comma-separated metric names")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        return args.fn(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DysaugError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the runtime exit code
        logger.debug("unhandled", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
