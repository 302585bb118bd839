"""Command-line driver for the three-stage workflow and its evaluation.

Exit codes: 0 success, 1 I/O or format failure, 2 invalid arguments,
3 missing prerequisite checkpoint, 4 training failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from . import codec as codec_mod
from . import diffusion as diff_mod
from . import evaluation as ev
from . import phantom, radiomics, speckle
from .dataio import ImageTensor, Unit, load_checkpoint, load_tensor, render_png, save_checkpoint, save_tensor
from .dicomlite import read_dicom_file
from .errors import CTStandardError, FormatError, TrainingError, ValidationError

log = logging.getLogger("ctstandard")

EXIT_OK, EXIT_IO, EXIT_ARGS, EXIT_MISSING, EXIT_TRAIN = 0, 1, 2, 3, 4
CODEC_FILE = "codec.ctck"
DIFFUSION_FILE = "diffusion.ctck"


class MissingCheckpoint(CTStandardError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    image_size: int = 128
    latent_dim: int = 128
    codec: dict = field(default_factory=dict)
    diffusion: dict = field(default_factory=dict)
    quantizer: dict = field(default_factory=dict)
    dataset_dir: str = "data/train"
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            d = json.load(fh)
        if not isinstance(d, dict):
            raise ValidationError("config must be a JSON object")
        unknown = set(d) - set(cls.__dataclass_fields__) - {"paths"}
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        paths = d.pop("paths", {})
        d.update({f"{k}_dir": v for k, v in paths.items()})
        cfg = cls(**d)
        # relative paths resolve against the config file's directory
        base = os.path.dirname(os.path.abspath(path))
        for k in ("dataset_dir", "checkpoint_dir", "report_dir"):
            setattr(cfg, k, os.path.join(base, getattr(cfg, k)))
        return cfg

    def codec_config(self) -> codec_mod.CodecConfig:
        return codec_mod.CodecConfig.from_dict({**self.codec, "seed": self.seed,
                                                "image_size": self.image_size, "latent_dim": self.latent_dim})

    def diffusion_config(self) -> diff_mod.DiffusionConfig:
        return diff_mod.DiffusionConfig.from_dict({**self.diffusion, "seed": self.seed})

    def quantizer_spec(self) -> radiomics.QuantizerSpec:
        return radiomics.QuantizerSpec(**self.quantizer)


def _checkpoint(directory, name):
    path = os.path.join(directory, name)
    if not os.path.exists(path):
        raise MissingCheckpoint(f"{path} not found; train the {name.split('.')[0]} stage first")
    return load_checkpoint(path)


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "checkpoints", None):
        cfg.checkpoint_dir = args.checkpoints
    return cfg


def cmd_phantom_gen(args) -> int:
    if args.n < 1 or args.size < 64:
        raise ValidationError("--n must be >= 1 and --size >= 64")
    samples = phantom.gen_paired_dataset(args.seed, args.n, args.size, args.tumors)
    path = phantom.write_dataset(samples, args.out)
    print(f"wrote {len(samples)} pairs to {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    os.makedirs(cfg.checkpoint_dir, exist_ok=True)
    rows = []
    if args.stage == "codec":
        samples = phantom.read_dataset(cfg.dataset_dir)
        images = [s.a for s in samples] + [s.b for s in samples]
        ckpt = codec_mod.train_codec(images, cfg.codec_config(), rows)
        save_checkpoint(ckpt, os.path.join(cfg.checkpoint_dir, CODEC_FILE))
        codec_mod.write_loss_csv(rows, os.path.join(cfg.checkpoint_dir, "codec_loss.csv"))
    else:
        codec_ckpt = _checkpoint(cfg.checkpoint_dir, CODEC_FILE)
        samples = phantom.read_dataset(cfg.dataset_dir)
        ckpt = diff_mod.train_diffusion(codec_ckpt, samples, cfg.diffusion_config(), rows)
        save_checkpoint(ckpt, os.path.join(cfg.checkpoint_dir, DIFFUSION_FILE))
        codec_mod.write_loss_csv(rows, os.path.join(cfg.checkpoint_dir, "diffusion_loss.csv"),
                                 header=("step", "l1_noise_loss"))
    print(f"trained {args.stage}; checkpoint in {cfg.checkpoint_dir}")
    return EXIT_OK


def _read_input(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(132)
    if head[:4] == b"CTTN":
        return load_tensor(path).data
    if head[128:132] == b"DICM":
        return read_dicom_file(path)[1].data
    raise FormatError(f"{path} is neither a CTTN tensor nor a DICOM file")


def cmd_standardize(args) -> int:
    cfg = _load_config(args)
    std = diff_mod.Standardizer(_checkpoint(cfg.checkpoint_dir, CODEC_FILE),
                                _checkpoint(cfg.checkpoint_dir, DIFFUSION_FILE))
    img = _read_input(args.inp)
    out = ImageTensor(std(img, args.seed if args.seed is not None else cfg.seed), Unit.HU)
    save_tensor(out, args.out)
    if args.png:
        render_png(out, path=args.png)
    return EXIT_OK


def evaluate_dataset(samples, standardizer, q: radiomics.QuantizerSpec, seed: int):
    """Feature pairs ``(input, standard)`` and ``(standardized, standard)`` per tumor ROI."""
    base_pairs, model_pairs = [], []
    for i, s in enumerate(samples):
        out = standardizer(s.a, seed + i)
        for roi in s.tumor_rois:
            ft = radiomics.extract_features(s.b, roi, q)
            base_pairs.append((radiomics.extract_features(s.a, roi, q), ft))
            model_pairs.append((radiomics.extract_features(out, roi, q), ft))
    return base_pairs, model_pairs


def summarize(base: ev.ReproReport, model: ev.ReproReport) -> dict:
    d_glcm = model.class_ccc["GLCM"][0] - base.class_ccc["GLCM"][0]
    n0, n1 = base.count_at(0.15), model.count_at(0.15)
    return {
        "baseline": base.to_dict(),
        "standardized": model.to_dict(),
        "glcm_ccc_gain": d_glcm,
        "reproducible_gain_relative": (n1 - n0) / n0 if n0 else None,
    }


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    std = diff_mod.Standardizer(_checkpoint(cfg.checkpoint_dir, CODEC_FILE),
                                _checkpoint(cfg.checkpoint_dir, DIFFUSION_FILE))
    samples = phantom.read_dataset(args.dataset)
    base_pairs, model_pairs = evaluate_dataset(samples, std, cfg.quantizer_spec(), cfg.seed)
    base, model = ev.repro_curve(base_pairs), ev.repro_curve(model_pairs)
    ev.write_report(model, args.out)
    ev.write_report(base, args.out, prefix="baseline_")
    ev.write_json(summarize(base, model), os.path.join(args.out, "summary.json"))
    print(f"GLCM CCC {base.class_ccc['GLCM'][0]:.3f} -> {model.class_ccc['GLCM'][0]:.3f}; "
          f"reproducible at 15%: {base.count_at(0.15)} -> {model.count_at(0.15)}")
    return EXIT_OK


def cmd_speckle_study(args) -> int:
    d = {}
    if args.config:
        with open(args.config) as fh:
            d = json.load(fh)
    if args.seed is not None:
        d["seed"] = args.seed
    out_dir = d.pop("out_dir", None) or args.out
    report = speckle.run_denoise_study(speckle.StudyConfig.from_dict(d), out_dir)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctstandard", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    ph = sub.add_parser("phantom", help="synthetic data")
    phs = ph.add_subparsers(dest="action", required=True)
    gen = phs.add_parser("gen", help="write a paired phantom dataset")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--size", type=int, default=128)
    gen.add_argument("--tumors", type=int, default=3)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_phantom_gen)

    tr = sub.add_parser("train", help="train one stage")
    tr.add_argument("stage", choices=("codec", "diffusion"))
    tr.add_argument("--config")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--checkpoints")
    tr.set_defaults(func=cmd_train)

    st = sub.add_parser("standardize", help="map one image to the standard domain")
    st.add_argument("--in", dest="inp", required=True)
    st.add_argument("--out", required=True)
    st.add_argument("--png")
    st.add_argument("--seed", type=int)
    st.add_argument("--config")
    st.add_argument("--checkpoints")
    st.set_defaults(func=cmd_standardize)

    e = sub.add_parser("evaluate", help="reproducibility report on a paired dataset")
    e.add_argument("--dataset", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--config")
    e.add_argument("--checkpoints")
    e.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("speckle", help="speckle case study")
    sps = sp.add_subparsers(dest="action", required=True)
    study = sps.add_parser("study", help="run the patch denoising study")
    study.add_argument("--config")
    study.add_argument("--seed", type=int)
    study.add_argument("--out", default="speckle_report")
    study.set_defaults(func=cmd_speckle_study)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except MissingCheckpoint as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    except TrainingError as e:
        print(f"training failed: {e}", file=sys.stderr)
        return EXIT_TRAIN
    except (ValidationError, TypeError) as e:
        print(f"invalid arguments: {e}", file=sys.stderr)
        return EXIT_ARGS
    except (OSError, FormatError, json.JSONDecodeError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except CTStandardError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
