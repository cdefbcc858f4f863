"""Command-line entry point.

Subcommands: gen, train, compress, decompress, sweep, sort-eval, stats.
Exit codes: 0 success, 1 usage error, 2 I/O or format error, 3 training
divergence. Every command writes a key=value manifest next to its output.
"""

from __future__ import annotations

import argparse
import logging
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import container, data, entropy, evaluation
from . import model as cae
from .nn import mac_count, param_count

log = logging.getLogger("spikezip")

EXIT_USAGE = 1
EXIT_IO = 2
EXIT_DIVERGED = 3

REFERENCE_MACS_PER_SPIKE = 79_250
MAC_CONVENTION = "multiply-accumulates of every convolution plus the K*d products of the VQ distance search; norm/activation/pooling excluded"

CONFIG_KEYS = {
    "k": int,
    "mspk": int,
    "nfeat": int,
    "spike_len": int,
    "bit_depth": int,
    "width": int,
    "groups": int,
    "denoising": lambda s: s.lower() in ("1", "true", "yes"),
    "seed": int,
    "epochs": int,
    "batch_size": int,
    "repeats": int,
    "pca": str,
    "dct": str,
    "dwt": str,
    "cae_k": str,
    "restarts": int,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# config files and manifests


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        try:
            out[key] = CONFIG_KEYS[key](value)
        except ValueError:
            raise UsageError(f"{path}:{n}: bad value for {key}: {value!r}") from None
    return out


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"expected a list of integers, got {text!r}") from None


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"version.package": pkg, "version.python": platform.python_version(), "version.numpy": np.__version__}


def write_manifest(path, entries: dict) -> Path:
    path = Path(path)
    lines = [f"{k}={_fmt(v)}" for k, v in entries.items()]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_manifest(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    return str(v).replace("\n", " ")


def _manifest_path(out: Path) -> Path:
    return out / "manifest.txt" if out.is_dir() else out.with_name(out.name + ".manifest")


def _config_entries(config: cae.CaeConfig) -> dict:
    return {
        "config.m_spk": config.m_spk,
        "config.spike_len": config.spike_len,
        "config.bit_depth": config.bit_depth,
        "config.n_feat": config.n_feat,
        "config.codebook_size": config.codebook_size,
        "config.groups": config.groups,
        "config.width": config.width,
        "config.denoising": int(config.denoising),
        "config.digest": config.digest().hex(),
    }


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p, out_required=True):
    p.add_argument("--config", type=Path, help="key=value file; command-line flags win")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, required=out_required)


def _add_model_flags(p):
    p.add_argument("--k", type=int, help="codebook size K")
    p.add_argument("--mspk", type=int, help="spikes (channels) per encoder input")
    p.add_argument("--nfeat", type=int, help="latent vectors per input")
    p.add_argument("--width", type=int)
    p.add_argument("--groups", type=int)
    p.add_argument("--denoising", action="store_true", default=None)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spikezip", description="Compressive autoencoder for extracellular spike waveforms.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic spike dataset")
    _add_common(p)
    p.add_argument("--templates", type=int, default=2, help="number of units")
    p.add_argument("--template-file", type=Path, help=".npy or .csv waveforms instead of built-in shapes")
    p.add_argument("--noise", type=float, default=0.1, help="background noise std")
    p.add_argument("--rate", type=float, default=20.0, help="firing rate per unit in Hz")
    p.add_argument("--duration", type=float, default=60.0, help="seconds")
    p.add_argument("--spike-len", type=int, default=64, dest="spike_len")
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--sample-rate", type=float, default=data.DEFAULT_RATE, dest="sample_rate")
    p.add_argument("--detect", action="store_true", help="detect and align spikes instead of using ground-truth times")
    p.add_argument("--jitter", type=int, default=0, help="alignment jitter width; keeps clean targets")

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("dataset", type=Path)
    _add_common(p)
    _add_model_flags(p)

    p = sub.add_parser("compress", help="encode a dataset into a bitstream")
    p.add_argument("dataset", type=Path)
    p.add_argument("--model", type=Path, required=True)
    _add_common(p)

    p = sub.add_parser("decompress", help="decode a bitstream into a dataset")
    p.add_argument("stream", type=Path)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--reference", type=Path, help="original dataset, for SNDR")
    _add_common(p)

    p = sub.add_parser("sweep", help="rate-quality sweep of CAE and baselines")
    p.add_argument("dataset", type=Path)
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--repeats", type=int)
    p.add_argument("--svg", action="store_true", help="also render rate_quality.svg")

    p = sub.add_parser("sort-eval", help="spike-sorting accuracy before and after compression")
    p.add_argument("dataset", type=Path)
    p.add_argument("--model", type=Path, action="append", required=True)
    p.add_argument("--clusters", type=int, help="defaults to the number of labelled units")
    p.add_argument("--restarts", type=int)
    _add_common(p)

    p = sub.add_parser("stats", help="parameter, MAC and codeword statistics")
    p.add_argument("--model", type=Path)
    p.add_argument("--dataset", type=Path, help="for codeword usage")
    p.add_argument("--spike-len", type=int, dest="spike_len")
    _add_common(p, out_required=False)
    _add_model_flags(p)
    return parser


def _settings(args) -> dict:
    """Merge the config file with explicit flags (flags win)."""
    merged = read_config_file(args.config) if getattr(args, "config", None) else {}
    for key in CONFIG_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    return merged


def _config_from(settings: dict, spike_len: int | None = None, m_spk: int | None = None) -> cae.CaeConfig:
    base = cae.CaeConfig()
    kwargs = dict(
        m_spk=settings.get("mspk", m_spk if m_spk is not None else base.m_spk),
        spike_len=settings.get("spike_len", spike_len if spike_len is not None else base.spike_len),
        bit_depth=settings.get("bit_depth", base.bit_depth),
        n_feat=settings.get("nfeat", base.n_feat),
        codebook_size=settings.get("k", base.codebook_size),
        groups=settings.get("groups", base.groups),
        width=settings.get("width", base.width),
        denoising=bool(settings.get("denoising", base.denoising)),
    )
    try:
        return cae.CaeConfig(**kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_batch(path: Path, m_spk: int | None = None) -> data.SpikeBatch:
    batch = data.load_dataset(path)
    if m_spk is not None and batch.m_spk != m_spk:
        raise UsageError(f"dataset has {batch.m_spk} channels per spike, model expects {m_spk}")
    return batch


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args, settings) -> dict:
    seed = settings.get("seed", 0)
    if args.templates < 1 or args.duration <= 0 or args.noise < 0:
        raise UsageError("need --templates >= 1, --duration > 0, --noise >= 0")
    if args.template_file is not None:
        templates = data.load_templates(args.template_file, spike_len=args.spike_len)
    else:
        templates = data.standard_templates(args.templates, args.spike_len, seed=seed, channels=args.channels)
    seq = data.generate(templates, args.noise, args.rate, args.duration, seed=seed, sample_rate=args.sample_rate)
    if args.detect:
        batch = data.extract_align(seq.signal, data.detect(seq.signal, args.spike_len), args.spike_len, args.sample_rate)
    else:
        batch = data.ground_truth_batch(seq)
    if args.jitter:
        batch = data.jitter(batch, args.jitter, seed, seq.signal)
    data.save_dataset(batch, args.out)
    return {
        "templates": len(templates),
        "noise": args.noise,
        "rate_hz": args.rate,
        "duration_s": args.duration,
        "spike_len": args.spike_len,
        "channels": batch.m_spk,
        "spikes": len(batch),
        "seed": seed,
    }


def cmd_train(args, settings) -> dict:
    batch = data.load_dataset(args.dataset)
    config = _config_from(settings, spike_len=batch.spike_len, m_spk=batch.m_spk)
    if batch.m_spk != config.m_spk or batch.spike_len != config.spike_len:
        raise UsageError(f"dataset spikes are {batch.m_spk}x{batch.spike_len}, config wants {config.m_spk}x{config.spike_len}")
    seed = settings.get("seed", 0)
    epochs = settings.get("epochs", 100)
    batch_size = settings.get("batch_size", 48)
    if epochs < 1 or batch_size < 1:
        raise UsageError("epochs and batch size must be positive")
    clean = None
    if config.denoising:
        if batch.clean is None:
            raise UsageError("denoising training needs a dataset with clean targets (gen --jitter)")
        clean = batch.clean
    model = cae.build(config, seed=seed)
    start = time.perf_counter()
    history = cae.train(model, batch.spikes, epochs, batch_size=batch_size, seed=seed, clean=clean)
    cae.save(model, args.out)
    return {
        **_config_entries(config),
        "seed": seed,
        "epochs": epochs,
        "batch_size": batch_size,
        "spikes": len(batch),
        "input_scale": model.input_scale,
        "final_loss": history[-1],
        "train_seconds": round(time.perf_counter() - start, 3),
    }


def cmd_compress(args, settings) -> dict:
    model = cae.load(args.model)
    batch = _load_batch(args.dataset, model.config.m_spk)
    idx = cae.compress(model, batch.spikes)
    block = entropy.encode_block(idx, model.config.codebook_size, model.config.digest())
    raw = block.to_bytes()
    args.out.write_bytes(raw)
    h = entropy.entropy(entropy.SymbolHistogram.from_indexes(idx, model.config.codebook_size)) if idx.size else 0.0
    coded_bits = block.n_bits / max(idx.size, 1)
    return {
        **_config_entries(model.config),
        "seed": model.seed,
        "spikes": len(batch),
        "index_entropy_bits": h,
        "coded_bits_per_index": coded_bits,
        "cr_entropy": entropy.config_compression_ratio(model.config, h) if h > 0 else float("inf"),
        "cr_coded": entropy.config_compression_ratio(model.config, coded_bits) if idx.size else float("inf"),
        "stream_bytes": len(raw),
    }


def cmd_decompress(args, settings) -> dict:
    model = cae.load(args.model)
    block = entropy.CompressedBlock.from_bytes(args.stream.read_bytes())
    if block.config_digest != model.config.digest() or block.k != model.config.codebook_size:
        raise container.FormatError("bitstream was produced with a different model configuration")
    idx = entropy.decode_block(block)
    if idx.shape[1] != model.config.n_feat:
        raise container.FormatError("bitstream index layout does not match the model")
    recon = cae.decompress(model, idx).astype(np.float32)
    n = len(recon)
    m = model.config.m_spk
    ref = _load_batch(args.reference, m) if args.reference else None
    out = data.SpikeBatch(
        recon,
        ref.labels if ref is not None else -np.ones(n, dtype=np.int64),
        ref.timestamps if ref is not None else np.zeros(n, dtype=np.int64),
        ref.channel_map if ref is not None else np.tile(np.arange(m), (n, 1)),
        ref.sample_rate if ref is not None else data.DEFAULT_RATE,
    )
    data.save_dataset(out, args.out)
    entries = {**_config_entries(model.config), "seed": model.seed, "spikes": n}
    if ref is not None:
        if len(ref) != n:
            raise UsageError(f"reference has {len(ref)} spikes, stream has {n}")
        entries["sndr_db"] = evaluation.sndr(ref.spikes, recon)
        print(f"SNDR {entries['sndr_db']:.4f} dB")
    return entries


def cmd_sweep(args, settings) -> dict:
    batch = data.load_dataset(args.dataset)
    spikes = batch.spikes.astype(np.float64)
    seed = settings.get("seed", 0)
    repeats = settings.get("repeats", evaluation.DEFAULT_REPEATS)
    epochs = settings.get("epochs", 100)
    base = _config_from(settings, spike_len=batch.spike_len, m_spk=batch.m_spk)
    grid = []
    for name in ("pca", "dct", "dwt"):
        ms = _int_list(settings[name]) if name in settings else [m for m in (1, 2, 3, 4, 6, 8, 12, 16) if m <= batch.spike_len]
        grid += [evaluation.MethodSpec(name, m) for m in ms]
    ks = _int_list(settings["cae_k"]) if "cae_k" in settings else [base.codebook_size]
    for k in ks:
        try:
            cfg = cae.CaeConfig(**{**base.__dict__, "codebook_size": k})
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        grid.append(evaluation.MethodSpec("cae", config=cfg))
    args.out.mkdir(parents=True, exist_ok=True)
    points = evaluation.sweep(
        spikes, grid, repeats=repeats, seed=seed, epochs=epochs, batch_size=settings.get("batch_size", 48), bit_depth=base.bit_depth
    )
    evaluation.write_rate_quality_csv(points, args.out / "rate_quality.csv")
    if args.svg:
        evaluation.render_rate_quality_svg(points, args.out / "rate_quality.svg")
    for p in points:
        print(f"{p.label:32s} CR {p.cr:8.2f}  SNDR {p.sndr_db:7.3f} dB (+-{p.sndr_std:.3f})")
    return {**_config_entries(base), "seed": seed, "repeats": repeats, "epochs": epochs, "points": len(points)}


def cmd_sort_eval(args, settings) -> dict:
    batch = data.load_dataset(args.dataset)
    labels = batch.labels if batch.labels.ndim == 1 else batch.labels[:, 0]
    if (labels < 0).any():
        raise UsageError("dataset has no ground-truth labels")
    k = args.clusters or len(np.unique(labels))
    models = [cae.load(p) for p in args.model]
    for m in models:
        if (m.config.m_spk, m.config.spike_len) != (batch.m_spk, batch.spike_len):
            raise UsageError("model input shape does not match the dataset")
    restarts = settings.get("restarts", evaluation.DEFAULT_RESTARTS)
    seed = settings.get("seed", 0)
    report = evaluation.sorting_report(batch, models, k, sequence_id=args.dataset.stem, restarts=restarts, seed=seed)
    args.out.mkdir(parents=True, exist_ok=True)
    evaluation.write_sorting_csv([report], args.out / "sorting.csv")
    print(f"raw accuracy {report.accuracy_before:.4f}")
    entries = {"seed": seed, "clusters": k, "restarts": restarts, "accuracy_raw": report.accuracy_before}
    for cr, acc in sorted(report.accuracy_after.items()):
        print(f"CR {cr:8.2f} accuracy {acc:.4f}")
        entries[f"accuracy_cr_{cr:.2f}"] = acc
    return entries


def cmd_stats(args, settings) -> dict:
    if args.model is not None:
        model = cae.load(args.model)
    else:
        config = _config_from(settings, spike_len=getattr(args, "spike_len", None))
        model = cae.build(config, seed=settings.get("seed", 0))
    c = model.config
    enc = param_count(model.encoder_with_vq())
    dec = param_count(model.decoder)
    macs = mac_count(model.encoder_with_vq(), (c.m_spk, c.spike_len))
    per_spike = macs / c.m_spk
    lines = [
        f"encoder+VQ parameters: {enc}",
        f"decoder parameters: {dec}",
        f"encoder MACs per spike: {per_spike:.0f} ({MAC_CONVENTION})",
        f"reference MACs per spike: {REFERENCE_MACS_PER_SPIKE / 1000:.2f}K (ratio {per_spike / REFERENCE_MACS_PER_SPIKE:.3f})",
        f"CR at log2 K bits: {entropy.config_compression_ratio(c):.3f}",
    ]
    entries = {**_config_entries(c), "params_encoder_vq": enc, "params_decoder": dec, "macs_per_spike": per_spike}
    entries["macs_reference"] = REFERENCE_MACS_PER_SPIKE
    entries["mac_convention"] = MAC_CONVENTION
    if args.dataset is not None:
        batch = _load_batch(args.dataset, c.m_spk)
        stats = evaluation.codeword_stats(model, batch.spikes)
        lines.append(f"codeword entropy: {stats.entropy_bits:.4f} bits of {np.log2(c.codebook_size):.0f}")
        lines.append(f"codewords used: {stats.usage_fraction:.4f}")
        entries.update(codeword_entropy=stats.entropy_bits, codeword_usage=stats.usage_fraction)
        if args.out is not None:
            args.out.mkdir(parents=True, exist_ok=True)
            evaluation.write_codewords_csv(stats, args.out / "codewords.csv")
    print("\n".join(lines))
    return entries


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "compress": cmd_compress,
    "decompress": cmd_decompress,
    "sweep": cmd_sweep,
    "sort-eval": cmd_sort_eval,
    "stats": cmd_stats,
}


def _check_paths(args) -> None:
    for name in ("dataset", "stream", "model", "reference", "config", "template_file"):
        val = getattr(args, name, None)
        for p in val if isinstance(val, list) else [val]:
            if p is not None and not Path(p).is_file():
                raise FileNotFoundError(f"no such file: {p}")
    out = getattr(args, "out", None)
    if out is not None:
        parent = out.parent if out.suffix else out
        if args.command in ("gen", "train", "compress", "decompress") and not out.parent.is_dir():
            raise FileNotFoundError(f"output directory does not exist: {out.parent}")
        if args.command not in ("gen", "train", "compress", "decompress") and parent.exists() and not parent.is_dir():
            raise FileExistsError(f"output path is not a directory: {out}")


def run(argv=None) -> int:
    """Run one command and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing command; see --help")
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        _check_paths(args)
        settings = _settings(args)
        entries = COMMANDS[args.command](args, settings)
    except UsageError as exc:
        print(f"spikezip: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except cae.DivergenceError as exc:
        print(f"spikezip: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, container.FormatError) as exc:
        print(f"spikezip: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"spikezip: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    manifest = {"command": args.command, "argv": " ".join(sys.argv[1:] if argv is None else argv), **_versions(), **entries}
    if args.out is not None:
        write_manifest(_manifest_path(args.out), manifest)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
