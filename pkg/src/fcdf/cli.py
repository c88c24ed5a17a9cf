"""Operator-facing command line: keygen, partition, serve, client, simulate,
report.

Key distribution mirrors the protocol's trust model: ``keygen`` plays the
trusted third party and writes both key files, which reach every client out
of band.  The server subcommand has no --keys flag at all; its key-blindness
is visible right at the interface.

Randomness is fully seeded and documented so runs replay exactly:
key generation draws from rng([seed, 0]), partitioning from rng(seed), and
client number i from rng([seed, 2, i]).  ``simulate`` composes the other
commands with these same streams, so running them by hand with one shared
seed reproduces its outputs byte for byte.

Exit codes: 0 success, 2 validation, 3 protocol or crypto failure, 4 I/O.
Diagnostics go to stderr (level picked by FCDF_LOG=error|info|debug);
machine-readable output goes to files or stdout, never mixed with logs.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ecdf, fhe, metrics, partition, protocol, ring
from .errors import (
    ContractError,
    EncodingError,
    FcdfError,
    FramingError,
    NoiseBudgetError,
    ProtocolError,
    ValidationError,
)

logger = logging.getLogger("fcdf")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_PROTOCOL = 3
EXIT_IO = 4

SECRET_KEY_FILE = "secret.key"
PUBLIC_KEY_FILE = "public.key"

CONFIG_DOC = """\
Config file: one key=value per line, '#' starts a comment.  Keys:
  kind                label | feature           (default label)
  k                   number of clients         (default 4)
  seed                master seed               (default 0)
  grid                feature grid points/dim   (default 100)
  n, q_bits           ring degree, modulus bits (default 4096, 54)
  scale_bits          fixed-point fraction bits (default 16)
  plain_modulus_bits  plaintext space bits      (default 26)
  classes             synthetic class count     (default 100 label / 20 feature)
  per_class           samples per class         (default 500 label / 50 feature)
  beta                Dirichlet concentration, label skew (default 0.1)
  dims                feature dimensions        (default 12)
  separation          class mean spread         (default 3.0)
  skew                in-pool fraction, feature skew (default 0.75)
  size                per-client dataset size, feature skew (default 300)
  iid                 true | false: shared-pool IID split (default false)
"""


@dataclass
class RunConfig:
    kind: str = ecdf.LABEL
    k: int = 4
    seed: int = 0
    grid: int = 100
    n: int = 4096
    q_bits: int = 54
    scale_bits: int = 16
    plain_modulus_bits: int = 26
    classes: int | None = None
    per_class: int | None = None
    beta: float = 0.1
    dims: int = 12
    separation: float = 3.0
    skew: float = 0.75
    size: int = 300
    iid: bool = False

    def __post_init__(self):
        if self.kind not in (ecdf.LABEL, ecdf.FEATURE):
            raise ValidationError(f"kind must be label or feature, got {self.kind!r}")
        if self.classes is None:
            self.classes = 100 if self.kind == ecdf.LABEL else 20
        if self.per_class is None:
            self.per_class = 500 if self.kind == ecdf.LABEL else 50


def load_config(path) -> RunConfig:
    values: dict = {}
    bools = {"iid"}
    ints = {"k", "seed", "grid", "n", "q_bits", "scale_bits",
            "plain_modulus_bits", "classes", "per_class", "dims", "size"}
    floats = {"beta", "separation", "skew"}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in ints:
                values[key] = int(value)
            elif key in floats:
                values[key] = float(value)
            elif key in bools:
                if value.lower() not in ("true", "false"):
                    raise ValidationError(f"{path}:{lineno}: {key} must be true/false")
                values[key] = value.lower() == "true"
            elif key == "kind":
                values[key] = value
            else:
                raise ValidationError(f"{path}:{lineno}: unknown config key {key!r}")
    return RunConfig(**values)


def _keygen_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 0])


def _client_rng(seed: int, client_id: int) -> np.random.Generator:
    return np.random.default_rng([seed, 2, client_id])


def _parse_address(text: str) -> tuple:
    host, sep, port = text.rpartition(":")
    if not sep:
        return text, protocol.DEFAULT_PORT
    return host or "127.0.0.1", int(port)


def _load_secret_key(keys_dir) -> fhe.SecretKey:
    path = Path(keys_dir) / SECRET_KEY_FILE
    kind, key = fhe.key_from_bytes(path.read_bytes())
    if kind != fhe.KEY_KIND_SECRET:
        raise ValidationError(f"{path} is not a secret key file")
    return key


def _sniff_dataset(path, client_id: int) -> ecdf.Dataset:
    with open(path) as fh:
        first = fh.readline()
    if first.startswith("f0,"):
        return ecdf.read_feature_csv(path, client_id=client_id)
    return ecdf.read_label_csv(path, client_id=client_id)


# --- subcommands -------------------------------------------------------------

def cmd_keygen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    secret_path = out / SECRET_KEY_FILE
    public_path = out / PUBLIC_KEY_FILE
    for path in (secret_path, public_path):
        if path.exists() and not args.force:
            raise FileExistsError(f"{path} exists; pass --force to overwrite")
    scheme = fhe.default_scheme(args.n, args.q_bits, args.scale_bits,
                                args.plain_bits)
    sk, pk = fhe.keygen(scheme, _keygen_rng(args.seed))
    secret_path.write_bytes(fhe.secret_key_to_bytes(sk))
    public_path.write_bytes(fhe.public_key_to_bytes(pk))
    logger.info("wrote %s and %s", secret_path, public_path)
    print(f"n={scheme.ring.n} q={scheme.ring.q} ({args.q_bits} bits) "
          f"scale_bits={scheme.scale_bits} plain_modulus_bits={scheme.plain_modulus_bits}")
    return EXIT_OK


def _parse_synth(spec: str):
    kind, sep, rest = spec.partition(":")
    if kind not in ("labels", "features"):
        raise ValidationError(f"synth spec must start with labels: or features:, got {spec!r}")
    options = {}
    if rest:
        for item in rest.split(","):
            key, sep2, value = item.partition("=")
            if not sep2:
                raise ValidationError(f"malformed synth option {item!r}")
            options[key.strip()] = value.strip()
    return kind, options


def _synth_dataset(spec: str, seed: int) -> ecdf.Dataset:
    kind, options = _parse_synth(spec)
    if kind == "labels":
        classes = int(options.pop("classes", 100))
        per = int(options.pop("per", 500))
        if options:
            raise ValidationError(f"unknown label synth options {sorted(options)}")
        return partition.synth_labels(classes, per)
    classes = int(options.pop("classes", 20))
    per = int(options.pop("per", 50))
    dims = int(options.pop("dims", 12))
    separation = float(options.pop("separation", 3.0))
    if options:
        raise ValidationError(f"unknown feature synth options {sorted(options)}")
    return partition.synth_features(classes, dims, per, separation, seed)


def _write_partition(out_dir: Path, part: partition.Partition, kind: str):
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, ds in enumerate(part.datasets):
        path = out_dir / f"client_{i}.csv"
        if kind == ecdf.LABEL:
            ecdf.write_label_csv(path, ds)
        else:
            ecdf.write_feature_csv(path, ds)
    partition.write_manifest(out_dir / "manifest.txt", part)


def cmd_partition(args) -> int:
    if args.labels:
        dataset = ecdf.read_label_csv(args.labels)
    elif args.features:
        dataset = ecdf.read_feature_csv(args.features)
    else:
        dataset = _synth_dataset(args.synth, args.seed)
    if dataset.kind == ecdf.LABEL:
        spec = partition.PartitionSpec(k=args.k, beta=args.beta, seed=args.seed)
        part = partition.dirichlet_label_partition(dataset, spec)
    else:
        spec = partition.PartitionSpec(
            k=args.k, skew_fraction=args.skew,
            per_client_size=args.size, seed=args.seed,
        )
        part = partition.feature_skew_partition(dataset, spec, iid=args.iid)
    _write_partition(Path(args.out), part, dataset.kind)
    sizes = ",".join(str(d.n_samples) for d in part.datasets)
    logger.info("partitioned %d samples into %s", dataset.n_samples, sizes)
    print(f"wrote {args.k} client datasets (sizes {sizes}) to {args.out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    host, port = _parse_address(args.bind)
    scheme = fhe.default_scheme(args.n, args.q_bits, args.scale_bits,
                                args.plain_bits)
    listener = protocol.TcpListener(host, port)
    logger.info("listening on %s:%d for %d clients", *listener.address, args.k)
    result = protocol.run_server(listener, args.k, scheme, args.grid,
                                 timeout=args.timeout)
    print(f"aggregated {result.k} clients over a "
          f"{result.policy.total_points}-point policy")
    return EXIT_OK


def _client_artifacts(out_dir, result: protocol.ClientResult,
                      scheme_meta: dict):
    central = result.central
    bundle = metrics.build_bundle({result.client_id: result.local}, central,
                                  scheme_meta)
    metrics.save_artifacts(out_dir, bundle)


def cmd_client(args) -> int:
    host, port = _parse_address(args.server)
    sk = _load_secret_key(args.keys)
    dataset = _sniff_dataset(args.data, args.client_id)
    conn = protocol.TcpConnection.connect(host, port, retry_for=args.retry_for)
    result = protocol.run_client(conn, dataset, sk, args.client_id,
                                 _client_rng(args.seed, args.client_id),
                                 timeout=args.timeout)
    meta = {
        "k": str(result.k),
        "kind": dataset.kind,
        "client_id": str(args.client_id),
        "seed": str(args.seed),
        "n": str(sk.s.params.n),
        "q": str(sk.s.params.q),
    }
    _client_artifacts(Path(args.out), result, meta)
    logger.info("client %d stored central CDF in %s", args.client_id, args.out)
    print(f"client {args.client_id}: central CDF over "
          f"{result.policy.total_points} grid points, k={result.k}")
    return EXIT_OK


def run_simulation(config: RunConfig, out_dir: Path) -> metrics.ReportBundle:
    """keygen -> partition -> loopback protocol -> metrics, one process."""
    out_dir.mkdir(parents=True, exist_ok=True)
    scheme = fhe.default_scheme(config.n, config.q_bits, config.scale_bits,
                                config.plain_modulus_bits)
    sk, pk = fhe.keygen(scheme, _keygen_rng(config.seed))
    keys_dir = out_dir / "keys"
    keys_dir.mkdir(exist_ok=True)
    (keys_dir / SECRET_KEY_FILE).write_bytes(fhe.secret_key_to_bytes(sk))
    (keys_dir / PUBLIC_KEY_FILE).write_bytes(fhe.public_key_to_bytes(pk))
    logger.info("keygen done: n=%d q=%d", scheme.ring.n, scheme.ring.q)

    if config.kind == ecdf.LABEL:
        source = partition.synth_labels(config.classes, config.per_class)
        spec = partition.PartitionSpec(k=config.k, beta=config.beta,
                                       seed=config.seed)
        part = partition.dirichlet_label_partition(source, spec)
    else:
        source = partition.synth_features(config.classes, config.dims,
                                          config.per_class, config.separation,
                                          config.seed)
        spec = partition.PartitionSpec(
            k=config.k, skew_fraction=config.skew,
            per_client_size=config.size, seed=config.seed,
        )
        part = partition.feature_skew_partition(source, spec, iid=config.iid)
    _write_partition(out_dir / "data", part, config.kind)
    logger.info("partitioned into %s", [d.n_samples for d in part.datasets])

    rngs = [_client_rng(config.seed, ds.client_id) for ds in part.datasets]
    _, clients = protocol.run_loopback_federation(
        part.datasets, sk, scheme, config.grid, rngs
    )
    reference = clients[0].central
    for other in clients[1:]:
        for dim in range(reference.policy.n_dims):
            if not np.array_equal(reference.values[dim], other.central.values[dim]):
                raise ProtocolError("clients decrypted different central CDFs")
    metadata = {
        "k": str(config.k),
        "kind": config.kind,
        "seed": str(config.seed),
        "grid": str(config.grid),
        "n": str(scheme.ring.n),
        "q": str(scheme.ring.q),
        "scale_bits": str(scheme.scale_bits),
        "plain_modulus_bits": str(scheme.plain_modulus_bits),
        "policy_points": str(reference.policy.total_points),
    }
    bundle = metrics.build_bundle(
        {c.client_id: c.local for c in clients}, reference, metadata
    )
    metrics.save_artifacts(out_dir, bundle)
    metrics.emit_report(bundle, "svg", out_dir)
    return bundle


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    bundle = run_simulation(config, Path(args.out))
    print(metrics.render_text(bundle.report), end="")
    print(f"artifacts in {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    bundle = metrics.load_artifacts(args.in_dir)
    written = metrics.emit_report(bundle, args.format, args.out or args.in_dir)
    for path in written:
        print(path)
    return EXIT_OK


# --- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fcdf",
        description="Federated non-IID quantification via encrypted CDF aggregation.",
        epilog=CONFIG_DOC,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="write secret.key and public.key")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=4096, help="ring degree (power of two)")
    p.add_argument("--q-bits", type=int, default=54, help="modulus width in bits")
    p.add_argument("--scale-bits", type=int, default=16)
    p.add_argument("--plain-bits", type=int, default=26)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true", help="overwrite existing key files")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("partition", help="split a dataset across clients")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--labels", help="label CSV (one integer per line)")
    src.add_argument("--features", help="feature CSV (f0,...,class header)")
    src.add_argument("--synth", help="synthetic source, e.g. labels:classes=100,per=500 "
                                     "or features:classes=20,per=50,dims=12")
    p.add_argument("--k", type=int, required=True, help="number of clients")
    p.add_argument("--beta", type=float, default=0.1, help="Dirichlet concentration (labels)")
    p.add_argument("--skew", type=float, default=0.75, help="in-pool fraction (features)")
    p.add_argument("--size", type=int, default=300, help="per-client dataset size (features)")
    p.add_argument("--iid", action="store_true", help="shared-pool IID split (features)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("serve", help="run the aggregation server (holds no keys)")
    p.add_argument("--bind", default=f"127.0.0.1:{protocol.DEFAULT_PORT}")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--grid", type=int, default=100, help="feature grid points per dimension")
    p.add_argument("--n", type=int, default=4096)
    p.add_argument("--q-bits", type=int, default=54)
    p.add_argument("--scale-bits", type=int, default=16)
    p.add_argument("--plain-bits", type=int, default=26)
    p.add_argument("--timeout", type=float, default=None,
                   help="seconds to wait for client traffic before giving up")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("client", help="join a federation and quantify non-IIDness")
    p.add_argument("--server", default=f"127.0.0.1:{protocol.DEFAULT_PORT}")
    p.add_argument("--data", required=True, help="label or feature CSV")
    p.add_argument("--keys", required=True, help="directory holding secret.key")
    p.add_argument("--out", required=True)
    p.add_argument("--client-id", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timeout", type=float, default=None)
    p.add_argument("--retry-for", type=float, default=5.0,
                   help="seconds to retry connecting to the server")
    p.set_defaults(func=cmd_client)

    p = sub.add_parser("simulate", help="whole pipeline in one process (loopback)")
    p.add_argument("--config", required=True, help="flat key=value config file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="re-render stored CDF artifacts")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--format", choices=("csv", "svg", "text"), default="text")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def _setup_logging():
    level = os.environ.get("FCDF_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(
        level=levels.get(level, logging.ERROR),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, EncodingError) as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ProtocolError, FramingError, NoiseBudgetError, ContractError) as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except OSError as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
