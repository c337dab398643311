"""Command-line interface: ``mobiface <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data error. Errors are printed to
stderr as a single line starting with ``error:``.
"""

from __future__ import annotations

import argparse
import json
import platform
import statistics
import sys
import time

import numpy as np
from threadpoolctl import threadpool_limits

from . import analyzer, graph, ops, oracle, pipeline, weights as wio
from .tensor import ShapeError, allclose

EXIT_USAGE = 1
EXIT_DATA = 2

HARDWARE_DISCLAIMER = (
    "timings depend on CPU, BLAS build and thread count; published per-image "
    "latencies were measured on different hardware and are not comparable"
)

# Input column of the MobiFace architecture table, (H, W, C) then the embedding.
MOBIFACE_GOLDEN = [
    (112, 112, 3), (56, 56, 64), (56, 56, 64), (28, 28, 64), (28, 28, 64),
    (14, 14, 128), (14, 14, 128), (7, 7, 256), (7, 7, 256), (7, 7, 512), (512,),
]


class CLIError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _fmt_shape(shape):
    return "x".join(str(d) for d in shape)


def _emit(obj, as_json, text):
    if as_json:
        print(json.dumps(obj, indent=2))
    else:
        print(text)


def describe_rows(arch: str) -> list[tuple[str, tuple]]:
    net, head = graph.build_architecture(arch)
    rows = graph.row_trace(net)
    if head is not None:
        out = rows.pop()
        d = head.embedding_dim
        rows += [(f"flip head: {d}-d FC, ReLU", (d,)),
                 (f"flip head: {d}-d FC", (d,)),
                 ("average embedding with predicted mirror embedding", (d,)),
                 out]
    return rows


def cmd_describe(args):
    rows = describe_rows(args.arch)
    payload = {"arch": args.arch, "rows": [{"input": list(s), "operator": op} for op, s in rows]}
    text = "\n".join([f"{'input':<14} operator", "-" * 60]
                     + [f"{_fmt_shape(s):<14} {op}" for op, s in rows])
    _emit(payload, args.json, text)


def cmd_analyze(args):
    net, head = graph.build_architecture(args.arch)
    report = analyzer.analyze(net, head, args.arch)
    _emit(report.to_dict(), args.json, analyzer.format_table(report))


def cmd_init(args):
    net, head = graph.build_architecture(args.arch)
    store = wio.init_random(net, args.seed, head)
    wio.save(store, args.out)
    print(f"wrote {len(store)} tensors ({store.float_count():,} floats) to {args.out}")


def _load_model(args):
    arch = "mobiface-flipped" if args.flip_head else args.arch
    net, head = graph.build_architecture(arch)
    store = wio.load(args.weights)
    wio.validate(store, net, head, allow_extra=True)
    return net, head, store


def cmd_embed(args):
    net, head, store = _load_model(args)
    face = pipeline.load_face(args.image)
    emb = pipeline.embed_faces(net, store, face[None], head, args.flip_head)[0]
    if args.normalize:
        emb = pipeline.l2_normalize(emb)
    payload = {"image": args.image, "flip_head": args.flip_head, "embedding": emb.tolist()}
    if args.out is None:
        print(json.dumps(payload))
    elif str(args.out).endswith(".json"):
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
    else:
        wio.save(wio.WeightStore({"embedding": emb}), args.out)


def cmd_verify(args):
    net, head, store = _load_model(args)
    pairs = pipeline.read_pairs(args.pairs)
    result = pipeline.evaluate_pairs(net, store, pairs, args.flip_head, head, threads=args.threads)
    lines = [f"{'fold':>4} {'threshold':>10} {'accuracy':>9}"]
    lines += [f"{i:>4} {t:>10.5f} {a:>9.4f}" for i, (t, a) in enumerate(zip(result.thresholds, result.accuracies))]
    lines.append(f"mean accuracy {result.mean_accuracy:.4f} +/- {result.std_accuracy:.4f} "
                 f"over {len(pairs.entries)} pairs, {pairs.folds} folds")
    _emit(result.to_dict(), args.json, "\n".join(lines))


def _oracle_suite(count, seed):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        n, cin, cout = rng.integers(1, 3), rng.integers(1, 9), rng.integers(1, 9)
        h, w = rng.integers(3, 17, size=2)
        k, s, pad = rng.choice([1, 3]), rng.choice([1, 2]), rng.choice([0, 1])
        x = rng.standard_normal((n, cin, h, w), dtype=np.float32)
        p = ops.ConvParams(rng.standard_normal((cout, cin, k, k), dtype=np.float32), None, int(s), int(pad))
        worst = max(worst, float(np.abs(ops.conv2d(x, p) - oracle.naive_conv2d(x, p)).max()))
        d = ops.DwConvParams(rng.standard_normal((cin, 1, k, k), dtype=np.float32), int(s), int(pad))
        worst = max(worst, float(np.abs(ops.dwconv2d(x, d) - oracle.naive_dwconv2d(x, d)).max()))
    if worst > 1e-5:
        raise AssertionError(f"oracle divergence {worst:.2e} > 1e-5")
    return f"max diff {worst:.1e}"


def _shape_suite():
    got = [s for _, s in graph.row_trace(graph.build_mobiface())]
    if got != MOBIFACE_GOLDEN:
        raise AssertionError(f"shape trace {got} != golden")
    return f"{len(got)} checkpoints"


def _fold_suite(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 3, 8, 8), dtype=np.float32)
    conv = ops.ConvParams(rng.standard_normal((4, 3, 3, 3), dtype=np.float32), None, 1, 1)
    bn = ops.BatchNormParams(*(rng.standard_normal(4, dtype=np.float32) for _ in range(3)),
                             rng.uniform(0.5, 2, 4).astype(np.float32))
    if not allclose(ops.conv2d(x, ops.fold_bn(conv, bn)), ops.batchnorm(ops.conv2d(x, conv), bn), 1e-5):
        raise AssertionError("folded conv disagrees with conv + batch norm")
    return "ok"


def _weights_suite(path, arch, seed):
    net, head = graph.build_architecture(arch)
    store = wio.load(path) if path else wio.init_random(net, seed, head)
    wio.validate(store, net, head, allow_extra=path is not None)
    if not wio.loads(wio.dumps(store)).bitwise_equal(store):
        raise AssertionError("save/load round trip is not bitwise exact")
    return f"{store.float_count():,} floats"


def cmd_selftest(args):
    suites = [
        ("oracle cross-check", lambda: _oracle_suite(args.count, args.seed)),
        ("shape-trace golden", _shape_suite),
        ("batch-norm folding", lambda: _fold_suite(args.seed)),
        ("weights", lambda: _weights_suite(args.weights, args.arch, args.seed)),
    ]
    failed = 0
    for name, fn in suites:
        start = time.perf_counter()
        try:
            detail, status = fn(), "PASS"
        except (AssertionError, ValueError, KeyError, OSError) as exc:
            detail, status = str(exc), "FAIL"
            failed += 1
        print(f"{status} {name:<20} {time.perf_counter() - start:7.3f}s  {detail}")
    print(f"{len(suites) - failed}/{len(suites)} suites passed")
    if failed:
        raise CLIError(f"{failed} selftest suite(s) failed")


def _percentile(values, q):
    return float(np.percentile(np.asarray(values), q))


def cmd_bench(args):
    net, head = graph.build_architecture(args.arch)
    if args.weights:
        store = wio.load(args.weights)
        wio.validate(store, net, head, allow_extra=True)
    else:
        store = wio.init_random(net, args.seed, head)
    x = np.random.default_rng(args.seed).uniform(-1, 1, (1, *net.input_shape)).astype(np.float32)
    runs = []
    for threads in args.threads:
        with threadpool_limits(limits=threads):
            for _ in range(args.warmup):
                graph.forward(net, store, x)
            times = []
            for _ in range(args.iters):
                start = time.perf_counter()
                graph.forward(net, store, x)
                times.append((time.perf_counter() - start) * 1e3)
        runs.append({
            "threads": threads, "iters": args.iters, "times_ms": times,
            "mean_ms": statistics.fmean(times), "median_ms": statistics.median(times),
            "p95_ms": _percentile(times, 95),
        })
    payload = {"arch": args.arch, "machine": platform.machine(), "processor": platform.processor(),
               "runs": runs, "disclaimer": HARDWARE_DISCLAIMER}
    lines = [f"{'threads':>7} {'iters':>5} {'mean ms':>9} {'median ms':>9} {'p95 ms':>9}"]
    lines += [f"{r['threads']:>7} {r['iters']:>5} {r['mean_ms']:>9.2f} {r['median_ms']:>9.2f} {r['p95_ms']:>9.2f}"
              for r in runs]
    lines.append(f"note: {HARDWARE_DISCLAIMER}")
    _emit(payload, args.json, "\n".join(lines))


def cmd_export(args):
    store = wio.load(args.weights)
    np.savez(args.out, **store)
    print(f"exported {len(store)} tensors to {args.out}")


def cmd_import(args):
    with np.load(args.input) as data:
        store = wio.WeightStore({name: data[name] for name in data.files})
    if args.arch:
        net, head = graph.build_architecture(args.arch)
        wio.validate(store, net, head)
    wio.save(store, args.out)
    print(f"imported {len(store)} tensors to {args.out}")


def _positive(value):
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mobiface", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=fn)
        p.add_argument("--seed", type=int, default=42)
        return p

    def arch(p):
        p.add_argument("--arch", choices=graph.ARCHITECTURES, default="mobiface")

    p = add("describe", cmd_describe, "print the layer-by-layer shape trace")
    arch(p)
    p.add_argument("--json", action="store_true")

    p = add("analyze", cmd_analyze, "parameters, MACs, activation memory, downsampling")
    arch(p)
    p.add_argument("--json", action="store_true")

    p = add("init", cmd_init, "write seeded random weights")
    arch(p)
    p.add_argument("--out", required=True)

    p = add("embed", cmd_embed, "embed one face image")
    arch(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--flip-head", action="store_true")
    p.add_argument("--normalize", action="store_true", help="L2-normalise the embedding")
    p.add_argument("--out", help="output file (.json, otherwise MBFW)")

    p = add("verify", cmd_verify, "k-fold pair verification accuracy")
    arch(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--flip-head", action="store_true")
    p.add_argument("--threads", type=_positive, default=1)
    p.add_argument("--json", action="store_true")

    p = add("selftest", cmd_selftest, "oracle cross-checks, shape goldens, weight checks")
    arch(p)
    p.add_argument("--weights", help="also validate this weight file")
    p.add_argument("--count", type=_positive, default=20, help="random oracle instances")

    p = add("bench", cmd_bench, "forward-pass latency")
    arch(p)
    p.add_argument("--weights")
    p.add_argument("--iters", type=_positive, default=10)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--threads", type=_positive, nargs="+", default=[1])
    p.add_argument("--json", action="store_true")

    p = add("export", cmd_export, "convert an MBFW weight file to .npz")
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)

    p = add("import", cmd_import, "convert an .npz archive to an MBFW weight file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--arch", choices=graph.ARCHITECTURES, help="validate against this architecture")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (CLIError, ValueError, KeyError, OSError) as exc:
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        if isinstance(exc, OSError) and exc.filename:
            message = f"{exc.strerror}: {exc.filename}"
        print(f"error: {message}".splitlines()[0], file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
