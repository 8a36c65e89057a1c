"""Command-line front end.

Subcommands: train-vq, encode, decode, rd-sweep, inspect-basis,
weight-curve. Plot-style outputs are CSV only; rendering is left to
external tools. Exit codes: 0 success, 2 usage error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import codec, metrics, transform, vq, weights
from .graph import grid_laplacian
from .imaging import FormatError, _tile_array, load_image, save_image

CONFIG_KEYS = ("lam", "q_floor", "seed", "threads")

CONFIG_DEFAULTS = {
    "lam": vq.DEFAULT_LAMBDA,
    "q_floor": weights.Q_FLOOR_DEFAULT,
    "seed": 0,
    "threads": os.cpu_count() or 1,
}


class UsageError(Exception):
    pass


def _parse_float_list(text: str) -> list[float]:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if tok:
            out.append(float(tok))
    return out


def _parse_variances(text: str) -> np.ndarray:
    if ":" in text:
        parts = [float(t) for t in text.split(":")]
        if len(parts) != 3:
            raise UsageError("range must be start:stop:step")
        start, stop, step = parts
        return np.arange(start, stop + step / 2, step)
    return np.asarray(_parse_float_list(text))


def _load_config(path: str) -> dict:
    cfg = {}
    with open(path) as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"bad config line: {line!r}")
            key, value = (t.strip() for t in line.split("=", 1))
            key = key.replace("-", "_")
            if key == "lambda":
                key = "lam"
            if key not in CONFIG_KEYS:
                raise UsageError(f"unknown config key {key!r}")
            cfg[key] = value
    return cfg


def _resolve_settings(args) -> None:
    """Apply precedence: CLI flag > config file > default."""
    cfg = _load_config(args.config) if getattr(args, "config", None) else {}
    casts = {"lam": float, "q_floor": float, "seed": int, "threads": int}
    for key in CONFIG_KEYS:
        if getattr(args, key, None) is None:
            raw = cfg.get(key)
            value = casts[key](raw) if raw is not None else CONFIG_DEFAULTS[key]
            setattr(args, key, value)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value settings file (flags win)")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help=f"rate-distortion multiplier for codeword choice (default {vq.DEFAULT_LAMBDA})")
    p.add_argument("--q-floor", dest="q_floor", type=float, default=None,
                   help=f"minimum per-pixel weight (default {weights.Q_FLOOR_DEFAULT})")
    p.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads for per-block stages (default: cpu count)")


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="iagft",
                                 description="Perceptually weighted block-transform image codec")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-vq", help="train a weight-block codebook from an image")
    p.add_argument("--image", required=True, help="training image (PGM/PNG)")
    p.add_argument("--output", required=True, help="codebook file to write")
    p.add_argument("--codewords", type=int, default=vq.DEFAULT_CODEWORDS)
    p.add_argument("--delta", type=float, default=16.0,
                   help="quantization step assumed when deriving training weights")
    _add_common(p)
    p.set_defaults(func=_cmd_train_vq)

    p = sub.add_parser("encode", help="encode an image")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--mode", choices=("dct", "iagft"), default="iagft")
    p.add_argument("--table", choices=("uniform", "nonuniform"), default="uniform")
    p.add_argument("--delta", type=float, help="uniform quantization step")
    p.add_argument("--quality", type=float, help="quality factor 1..100 (nonuniform table)")
    p.add_argument("--codebook", help="codebook file (required for iagft mode)")
    p.add_argument("--no-metrics", action="store_true",
                   help="skip the decode-side quality report")
    _add_common(p)
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("decode", help="decode a bitstream to a PGM")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--codebook", help="codebook file (for iagft streams)")
    _add_common(p)
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("rd-sweep", help="rate-distortion sweep and BD-rate summary")
    p.add_argument("--image", required=True)
    p.add_argument("--deltas", help="comma-separated steps (uniform table)")
    p.add_argument("--qualities", help="comma-separated quality factors (nonuniform table)")
    p.add_argument("--table", choices=("uniform", "nonuniform"), default="uniform")
    p.add_argument("--modes", default="dct,iagft", help="comma-separated transforms to sweep")
    p.add_argument("--codebook", help="codebook file (needed when iagft is swept)")
    p.add_argument("--csv", help="write RD points to this CSV file")
    _add_common(p)
    p.set_defaults(func=_cmd_rd_sweep)

    p = sub.add_parser("inspect-basis", help="dump the basis for a weight block")
    p.add_argument("--weights", required=True,
                   help="text file with a rows x cols matrix of weights")
    p.add_argument("--csv", help="write per-mode energy/variation CSV here")
    _add_common(p)
    p.set_defaults(func=_cmd_inspect_basis)

    p = sub.add_parser("weight-curve", help="weight vs local variance curve data")
    p.add_argument("--delta", type=float, default=8.0)
    p.add_argument("--variances", default="0:2000:25",
                   help="comma list or start:stop:step range of local variances")
    p.add_argument("--csv", help="write variance,q rows here (default stdout)")
    _add_common(p)
    p.set_defaults(func=_cmd_weight_curve)

    return ap


def _training_blocks(image_path: str, delta: float, q_floor: float) -> np.ndarray:
    img = load_image(image_path)
    wm = codec.compute_weight_map(img, "uniform", delta, q_floor)
    blocks, _, _ = _tile_array(wm.q)
    return blocks


def _cmd_train_vq(args) -> int:
    blocks = _training_blocks(args.image, args.delta, args.q_floor)
    cb = vq.train_ecvq(blocks, k=args.codewords, lam=args.lam, seed=args.seed,
                       q_floor=args.q_floor)
    vq.save_codebook(cb, args.output)
    print(f"trained {cb.k} codewords from {blocks.shape[0]} blocks "
          f"({len(cb.training_costs)} iterations)")
    print("selection probabilities:", " ".join(f"{p:.4f}" for p in cb.probabilities))
    print(f"wrote {args.output} (id {vq.codebook_hash(cb):016x})")
    return 0


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise UsageError(message)


def _encode_params(args):
    if args.table == "uniform":
        _require(args.delta is not None, "--table uniform requires --delta")
        return float(args.delta)
    _require(args.quality is not None, "--table nonuniform requires --quality")
    return float(args.quality)


def _cmd_encode(args) -> int:
    img = load_image(args.input)
    param = _encode_params(args)
    cb = None
    if args.mode == "iagft":
        _require(args.codebook is not None, "--mode iagft requires --codebook")
        cb = vq.load_codebook(args.codebook)
    enc = codec.encode_image(img, transform=args.mode, table_mode=args.table,
                             param=param, codebook=cb, lam=args.lam,
                             q_floor=args.q_floor, threads=args.threads)
    blob = enc.to_bytes()
    with open(args.output, "wb") as f:
        f.write(blob)
    report = enc.rate_report(cb)
    print(f"wrote {args.output}: {report['total_bits']} bits "
          f"({report['bpp']:.4f} bpp)")
    print(f"  payload {report['payload_bits']} bits, tables {report['table_bits']} bits, "
          f"side info {report['side_bits']} bits ({100 * report['side_fraction']:.2f}%)")
    if "side_model_bits" in report:
        print(f"  side info model estimate {report['side_model_bits']:.1f} bits")
    if not args.no_metrics:
        rec = codec.decode_image(enc, cb)
        line = f"  psnr {metrics.psnr(rec, img):.2f} dB, ssim {metrics.ssim(rec, img):.5f}"
        try:
            line += f", ms-ssim {metrics.ms_ssim(rec, img):.5f}"
        except ValueError:
            line += ", ms-ssim n/a (image too small)"
        print(line)
    return 0


def _cmd_decode(args) -> int:
    with open(args.input, "rb") as f:
        enc = codec.EncodedImage.from_bytes(f.read())
    cb = None
    if enc.transform == "iagft":
        _require(args.codebook is not None, "this bitstream needs --codebook")
        cb = vq.load_codebook(args.codebook)
    img = codec.decode_image(enc, cb)
    save_image(img, args.output)
    print(f"wrote {args.output} ({img.width}x{img.height})")
    return 0


def _sweep_points(img, mode, table, params, cb, args):
    points = []
    for param in params:
        enc = codec.encode_image(img, transform=mode, table_mode=table, param=param,
                                 codebook=cb, lam=args.lam, q_floor=args.q_floor,
                                 threads=args.threads)
        rec = codec.decode_image(enc, cb)
        report = enc.rate_report()
        row = {
            "mode": mode,
            "param": param,
            "rate_bpp": report["bpp"],
            "psnr": metrics.psnr(rec, img),
            "ssim": metrics.ssim(rec, img),
            "msssim": metrics.ms_ssim(rec, img),
        }
        points.append(row)
    return points


def _cmd_rd_sweep(args) -> int:
    if args.table == "uniform":
        _require(args.deltas is not None, "--table uniform requires --deltas")
        params = _parse_float_list(args.deltas)
    else:
        _require(args.qualities is not None, "--table nonuniform requires --qualities")
        params = _parse_float_list(args.qualities)
    _require(len(params) >= 4, "BD-rate needs at least 4 sweep points")
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for m in modes:
        _require(m in ("dct", "iagft"), f"unknown mode {m!r}")
    cb = None
    if "iagft" in modes:
        _require(args.codebook is not None, "sweeping iagft requires --codebook")
        cb = vq.load_codebook(args.codebook)

    img = load_image(args.image)
    rows = []
    for mode in modes:
        rows.extend(_sweep_points(img, mode, args.table, params,
                                  cb if mode == "iagft" else None, args))

    out = open(args.csv, "w", newline="") if args.csv else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["mode", "param", "rate_bpp", "psnr", "ssim", "msssim"])
        for r in rows:
            writer.writerow([r["mode"], f"{r['param']:g}", f"{r['rate_bpp']:.6f}",
                             f"{r['psnr']:.4f}", f"{r['ssim']:.6f}", f"{r['msssim']:.6f}"])
    finally:
        if args.csv:
            out.close()

    if "dct" in modes and "iagft" in modes:
        base = [r for r in rows if r["mode"] == "dct"]
        prop = [r for r in rows if r["mode"] == "iagft"]
        print(f"BD-rate (iagft vs dct, {args.table} table):")
        for key, label in (("psnr", "PSNR"), ("ssim", "SSIM"), ("msssim", "MS-SSIM")):
            a = [metrics.RDPoint(r["rate_bpp"], r[key]) for r in base]
            b = [metrics.RDPoint(r["rate_bpp"], r[key]) for r in prop]
            print(f"  {label:8s} {metrics.bd_rate(a, b):+8.2f}%")
    return 0


def _cmd_inspect_basis(args) -> int:
    w = np.loadtxt(args.weights, dtype=np.float64)
    if w.ndim == 0:
        w = w.reshape(1, 1)
    if w.ndim != 2:
        raise ValueError("weights file must hold a 2-D matrix")
    rows, cols = w.shape
    q = w.reshape(-1)
    basis = transform.basis_for_weights(q, grid_laplacian(rows, cols), rows, cols)
    high = q > q.mean()
    energy_high, variation = transform.mode_energy_profile(basis, high)
    energy_low, _ = transform.mode_energy_profile(basis, ~high)

    np.set_printoptions(precision=4, suppress=True, linewidth=140)
    print(f"{rows}x{cols} block, weight sum {q.sum():g}")
    print("eigenvalues:", np.array2string(basis.eigenvalues))
    print("modes (columns):")
    print(basis.U)

    out = open(args.csv, "w", newline="") if args.csv else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["mode", "variation", "energy_high", "energy_low"])
        for k in range(basis.n):
            writer.writerow([k, f"{variation[k]:.8f}",
                             f"{energy_high[k]:.8f}", f"{energy_low[k]:.8f}"])
    finally:
        if args.csv:
            out.close()
    return 0


def _cmd_weight_curve(args) -> int:
    variances = _parse_variances(args.variances)
    curve = weights.weight_curve(args.delta, variances, q_floor=args.q_floor)
    out = open(args.csv, "w", newline="") if args.csv else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["variance", "q"])
        for var, q in curve:
            writer.writerow([f"{var:g}", f"{q:.8f}"])
    finally:
        if args.csv:
            out.close()
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        _resolve_settings(args)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except (FormatError, codec.BitstreamError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
