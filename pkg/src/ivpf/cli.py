"""Command-line interface: ``ivpf {compress,decompress,geninit,selftest,bench}``.

Inputs are raw tensor files (``IVPT``) or binary PGM/PPM images.  Reports go
to stdout, diagnostics to stderr; the exit status is 0 only if every step
succeeded.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import struct
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import codec, oracle
from .coder import init_state
from .errors import IVPFError
from .fixnum import QuantVector
from .model import FlowModel, load, random_init

TENSOR_MAGIC = b"IVPT"


# --------------------------------------------------------------------------
# file formats
# --------------------------------------------------------------------------

def write_tensor(x: np.ndarray) -> bytes:
    """``IVPT`` dtype:u8(0 = uint8) rank:u8 dims:u32*rank (big-endian), then row-major bytes."""
    x = np.asarray(x)
    if x.size and (x.min() < 0 or x.max() > 255):
        raise ValueError("raw tensors hold 8-bit samples")
    return (TENSOR_MAGIC + struct.pack(">BB", 0, x.ndim) + struct.pack(f">{x.ndim}I", *x.shape)
            + x.astype(np.uint8).tobytes())


def read_tensor(data: bytes) -> np.ndarray:
    if data[:4] != TENSOR_MAGIC or len(data) < 6:
        raise ValueError("not a raw tensor file")
    dtype, rank = struct.unpack_from(">BB", data, 4)
    if dtype != 0:
        raise ValueError(f"unsupported sample type {dtype}")
    shape = struct.unpack_from(f">{rank}I", data, 6)
    start = 6 + 4 * rank
    size = math.prod(shape)
    if len(data) != start + size:
        raise ValueError("raw tensor payload length does not match its shape")
    return np.frombuffer(data, dtype=np.uint8, offset=start).reshape(shape).astype(np.int64)


def _pnm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PNM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1


def read_pnm(data: bytes) -> np.ndarray:
    """Binary PGM (P5) as ``(H, W)`` or PPM (P6) as ``(H, W, 3)``; 8-bit only."""
    (magic, w, h, maxval), pos = _pnm_tokens(data, 4)
    if magic not in (b"P5", b"P6"):
        raise ValueError("only binary PGM/PPM are supported")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval > 255:
        raise ValueError("only 8-bit PGM/PPM are supported")
    shape = (h, w) if magic == b"P5" else (h, w, 3)
    payload = data[pos:pos + math.prod(shape)]
    if len(payload) != math.prod(shape):
        raise ValueError("PNM payload is truncated")
    return np.frombuffer(payload, dtype=np.uint8).reshape(shape).astype(np.int64)


def write_pnm(x: np.ndarray) -> bytes:
    x = np.asarray(x)
    if x.ndim == 3 and x.shape[2] == 1:
        x = x[..., 0]
    if x.ndim == 2:
        magic = b"P5"
    elif x.ndim == 3 and x.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"shape {x.shape} is not an image")
    header = magic + f"\n{x.shape[1]} {x.shape[0]}\n255\n".encode()
    return header + x.astype(np.uint8).tobytes()


def read_input(path: Path) -> np.ndarray:
    data = path.read_bytes()
    if data[:4] == TENSOR_MAGIC:
        return read_tensor(data)
    if data[:2] in (b"P5", b"P6"):
        return read_pnm(data)
    raise ValueError(f"{path}: unrecognized input format (expected IVPT, PGM or PPM)")


def write_output(path: Path, x: np.ndarray) -> None:
    if path.suffix.lower() in (".pgm", ".ppm"):
        path.write_bytes(write_pnm(x))
    else:
        path.write_bytes(write_tensor(x))


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _jobs(args) -> int:
    if args.jobs is not None:
        return max(1, args.jobs)
    return max(1, int(os.environ.get("IVPF_JOBS", "1")))


def _get_model(args, shape=None) -> FlowModel:
    if args.model:
        return load(Path(args.model).read_bytes())
    if shape is None:
        raise ValueError("--model is required here")
    return random_init(shape, args.layers, args.levels, args.seed)


def _config(args, model: FlowModel) -> codec.CodecConfig:
    return codec.CodecConfig.from_model(model, h=args.h, k=args.k, C=args.C)


def _emit(args, records: list[dict], text: list[str]) -> None:
    if args.report == "json":
        for rec in records:
            print(json.dumps(rec, sort_keys=True))
    else:
        for line in text:
            print(line)


_WORKER_MODEL: FlowModel | None = None


def _worker_init(model_bytes: bytes) -> None:
    global _WORKER_MODEL
    _WORKER_MODEL = load(model_bytes)


def _worker_compress(job):
    x, cfg = job
    return codec.compress(x, _WORKER_MODEL, cfg, report=True)


def _compress_items(items, model: FlowModel, cfg, jobs: int):
    work = [(x, cfg) for x in items]
    if jobs == 1 or len(items) == 1:
        return [codec.compress(x, model, c, report=True) for x, c in work]
    with ProcessPoolExecutor(jobs, initializer=_worker_init, initargs=(model.save(),)) as pool:
        return list(pool.map(_worker_compress, work))


def _report_text(name: str, rep: codec.CodelengthReport) -> str:
    return (f"{name}: {rep.net_bits} bits net = {rep.bits_latent} latent - "
            f"{rep.bits_uniform_debited} bits-back + {rep.bits_aux_register} register; "
            f"{rep.bpd:.4f} bpd (register {rep.register_bpd:.4f} bpd); "
            f"container {rep.container_bytes} bytes")


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_compress(args) -> int:
    paths = [Path(p) for p in args.inputs]
    items = [read_input(p) for p in paths]
    shapes = {x.shape for x in items}
    if len(shapes) != 1:
        raise ValueError("all inputs must share one shape")
    model = _get_model(args, items[0].shape)
    if model.dim != items[0].size:
        raise ValueError(f"model expects {model.dim} values, inputs have {items[0].size}")
    cfg = codec.CodecConfig.from_model(model, h=args.h, k=args.k, C=args.C)
    cfg = codec.CodecConfig(items[0].shape, cfg.h, cfg.k, cfg.C, cfg.n, cfg.support)
    results = _compress_items(items, model, cfg, _jobs(args))
    blobs = [b for b, _ in results]
    if len(items) == 1 and not args.archive:
        out = blobs[0]
    else:
        out = codec.ARCHIVE_MAGIC + struct.pack(">I", len(blobs)) + b"".join(blobs)
    Path(args.output).write_bytes(out)
    _emit(args, [dict(input=str(p), **rep.as_dict()) for p, (_, rep) in zip(paths, results)],
          [_report_text(str(p), rep) for p, (_, rep) in zip(paths, results)])
    return 0


def cmd_decompress(args) -> int:
    data = Path(args.input).read_bytes()
    if data[:4] == codec.ARCHIVE_MAGIC:
        first = codec.read_header(data[8:])
        model = _get_model(args, first.config.shape)
        items = codec.decompress_many(data, model)
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        for i, x in enumerate(items):
            write_output(out / f"item_{i:05d}.ivpt", x)
    else:
        hdr = codec.read_header(data)
        model = _get_model(args, hdr.config.shape)
        x = codec.decompress(data, model)
        write_output(Path(args.output), x)
    return 0


def cmd_geninit(args) -> int:
    shape = tuple(int(s) for s in args.shape.split(","))
    model = random_init(shape, args.layers, args.levels, args.seed, alpha=args.alpha,
                        prior=args.prior)
    Path(args.output).write_bytes(model.save())
    _emit(args, [dict(output=args.output, shape=list(shape), layers=len(model.layers),
                      hash=model.hash.hex())],
          [f"wrote {args.output}: shape {shape}, {len(model.layers)} layers, "
           f"hash {model.hash.hex()[:16]}"])
    return 0


def _selftest_checks(args):
    rng = np.random.default_rng(args.seed)
    for d_b in (1, 2, 3):
        for k in (0, 2):
            for C in (3, 4):
                lo = -4 if d_b == 3 else -8
                s = oracle.random_admissible_scales(d_b, rng)
                t = rng.normal(size=d_b)
                rep = oracle.brute_force_mat_check(d_b, k, C, s, t, lo=lo, hi=-lo)
                yield rep.domain, rep.ok, f"{rep.cases} cases, {rep.n_violations} violations"

    for h, k, C in ((8, 14, 16), (4, 10, 16), (8, 8, 8), (6, 12, 24)):
        model = random_init((3, 3, 3), 4, 2, seed=args.seed, alpha=0.2, h=h, k=k, C=C)
        bad = 0
        for _ in range(20):
            x = rng.integers(0, 1 << h, size=model.shape)
            bad += not np.array_equal(codec.decompress(codec.compress(x, model), model), x)
        yield f"round trip h={h} k={k} C={C}", bad == 0, f"{bad} failures / 20"

    pmf = np.array([0.5, 0.25, 0.125, 0.0625, 0.0625])
    n = 16
    freq = [int(p * (1 << n)) for p in pmf]
    starts = np.concatenate([[0], np.cumsum(freq)[:-1]]).tolist()
    symbols = rng.choice(len(pmf), size=20000, p=pmf).tolist()
    st = init_state()
    b0 = st.bit_length()
    for sym in reversed(symbols):
        st.encode_symbol(starts[sym], freq[sym], n)
    used = st.bit_length() - b0
    entropy = -len(symbols) * float(np.sum(pmf * np.log2(pmf)))
    ideal = -sum(math.log2(pmf[sym]) for sym in symbols)
    cum = np.cumsum(freq).tolist()
    decoded = [st.decode_symbol(
        lambda b: (lambda i: (i, starts[i], freq[i]))(int(np.searchsorted(cum, b, "right"))), n)
        for _ in symbols]
    ok = decoded == symbols and st == init_state() and used <= ideal + 64
    yield "rANS entropy", ok, f"{used} bits vs entropy {entropy:.0f}"

    for scale in (0.5, 0.9):
        w = oracle.bijection_failure_demo(scale, 8)
        yield f"collision scale={scale}", w is not None, str(w)
    for scale in (2.0, 4.0):
        g = oracle.codelength_gap_demo(scale, n_samples=500, seed=args.seed)
        yield f"gap scale={scale}", g.relative_error < 0.05, g.to_text()

    model = random_init((4, 4, 3), 4, 1, seed=args.seed, alpha=0.1)
    curve = oracle.error_scaling_probe(model, range(6, 13), 32, seed=args.seed)
    yield ("error scaling", all(0.3 <= r <= 0.7 for r in curve.ratios),
           "ratios " + ", ".join(f"{r:.2f}" for r in curve.ratios))


def cmd_selftest(args) -> int:
    failed = 0
    for name, ok, detail in _selftest_checks(args):
        failed += not ok
        if args.report == "json":
            print(json.dumps(dict(check=name, ok=ok, detail=detail)), flush=True)
        else:
            print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}", flush=True)
    return 1 if failed else 0


def _bench_chunk(job):
    model_bytes, shape, count, seed = job
    model = load(model_bytes)
    rng = np.random.default_rng(seed)
    for _ in range(count):
        x = rng.integers(0, 256, size=shape)
        codec.decompress(codec.compress(x, model), model)
    return count


def cmd_bench(args) -> int:
    shape = tuple(int(s) for s in args.shape.split(","))
    model = _get_model(args, shape)
    rng = np.random.default_rng(args.seed)
    items = [rng.integers(0, 1 << model.h, size=model.shape) for _ in range(args.items)]
    cfg = _config(args, model)

    t0 = time.perf_counter()
    blobs = [codec.compress(x, model, cfg) for x in items]
    t1 = time.perf_counter()
    for b in blobs:
        codec.decompress(b, model)
    t2 = time.perf_counter()
    flow_time = 0.0
    for x in items:
        xm = QuantVector((x.reshape(-1) - (1 << (cfg.h - 1))) << (cfg.k - cfg.h), cfg.k)
        s = time.perf_counter()
        codec.flow_forward(xm, model, 0, cfg.C)
        flow_time += time.perf_counter() - s
    enc, dec = t1 - t0, t2 - t1
    records = [dict(items=len(items), shape=list(shape), encode_per_s=len(items) / enc,
                    decode_per_s=len(items) / dec, model_fraction=flow_time / enc,
                    coding_fraction=1 - flow_time / enc, coding_steps_per_item=2)]
    text = [f"{len(items)} items of shape {shape}",
            f"  encode  {len(items) / enc:9.1f} items/s",
            f"  decode  {len(items) / dec:9.1f} items/s",
            f"  encode split: model {100 * flow_time / enc:.0f}%, "
            f"coding {100 * (1 - flow_time / enc):.0f}%",
            "  coding steps per item: 2 (one bits-back batch + one latent batch)"]
    jobs = _jobs(args)
    if jobs > 1:
        per = -(-len(items) // jobs)
        s = time.perf_counter()
        with ProcessPoolExecutor(jobs) as pool:
            list(pool.map(_bench_chunk, [(model.save(), shape, per, args.seed + i)
                                         for i in range(jobs)]))
        par = per * jobs / (time.perf_counter() - s)
        records[0]["parallel_per_s"] = par
        text.append(f"  {jobs} workers: {par:.1f} round trips/s")
    _emit(args, records, text)
    return 0


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="model file (default: generated from --layers/--levels/--seed)")
    common.add_argument("--h", type=int, help="input bit depth")
    common.add_argument("--k", type=int, help="fixed-point precision (default 14)")
    common.add_argument("--C", type=int, help="MAT modulus bits (default 16)")
    common.add_argument("--levels", type=int, default=1)
    common.add_argument("--layers", type=int, default=4)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, help="worker processes (fallback: $IVPF_JOBS)")
    common.add_argument("--report", choices=("text", "json"), default="text")

    parser = argparse.ArgumentParser(prog="ivpf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", parents=[common], help="compress tensors or images")
    p.add_argument("inputs", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--archive", action="store_true", help="write an archive even for one input")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", parents=[common], help="restore a container or archive")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("geninit", parents=[common], help="write a randomly initialized model")
    p.add_argument("--shape", required=True, help="comma separated, e.g. 32,32,3")
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--prior", choices=("mixture", "uniform"), default="mixture")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_geninit)

    p = sub.add_parser("selftest", parents=[common], help="run the built-in verification suite")
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("bench", parents=[common], help="measure throughput")
    p.add_argument("--shape", default="8,8,3")
    p.add_argument("--items", type=int, default=50)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (IVPFError, ValueError, OSError) as exc:
        print(f"ivpf: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
