"""Command-line entry point.

Exit codes: 0 success, 1 operational failure, 2 invariant violation,
64 usage or configuration error. Results go to stdout, diagnostics to stderr.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import chain as chain_mod
from . import dataset, dbn, imgcodec, netsim
from .consensus import decide
from .errors import FirewallError

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INVARIANT = 2
EXIT_USAGE = 64

log = logging.getLogger("dbnfirewall")


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class AppConfig:
    arch: tuple[int, ...] = (4096, 3000, 3000)
    pretrain_epochs: int = 10
    finetune_epochs: int = 10
    batch_size: int = 10
    pretrain_scale: float = 0.1
    seed: int = 0
    difficulty: int = chain_mod.DEFAULT_DIFFICULTY
    threshold: float = 0.5
    alpha: float = 0.1
    t_min: float = 0.01
    n_nodes: int = 10
    faults: str = ""
    manifest: str | None = None
    network: str | None = None
    synthetic_per_class: int | None = None

    def validate(self) -> "AppConfig":
        checks = [
            ("arch", len(self.arch) >= 2 and all(s >= 1 for s in self.arch), "needs >= 2 positive sizes"),
            ("pretrain_epochs", self.pretrain_epochs >= 0, "must be >= 0"),
            ("finetune_epochs", self.finetune_epochs >= 0, "must be >= 0"),
            ("batch_size", self.batch_size >= 1, "must be >= 1"),
            ("pretrain_scale", self.pretrain_scale > 0, "must be > 0"),
            ("seed", self.seed >= 0, "must be >= 0"),
            ("difficulty", 0 <= self.difficulty <= 64, "must lie in [0, 64]"),
            ("threshold", 0 < self.threshold < 1, "must lie in (0, 1)"),
            ("alpha", 0 < self.alpha <= 1, "must lie in (0, 1]"),
            ("t_min", 0 < self.t_min <= 1, "must lie in (0, 1]"),
            ("n_nodes", self.n_nodes >= 1, "must be >= 1"),
        ]
        for name, ok, why in checks:
            if not ok:
                raise UsageError(f"config field {name}: {why} (got {getattr(self, name)!r})")
        if self.synthetic_per_class is not None and self.synthetic_per_class < 1:
            raise UsageError("config field synthetic_per_class: must be >= 1")
        try:
            self.fault_table()
        except ValueError as exc:
            raise UsageError(f"config field faults: {exc}") from None
        return self

    def fault_table(self) -> tuple[tuple[int, netsim.FaultModel], ...]:
        """``faults = 3:inverter, 5:constant(0.9)`` -> ((3, ...), (5, ...))."""
        out = []
        for item in filter(None, (s.strip() for s in self.faults.split(","))):
            idx, sep, kind = item.partition(":")
            if not sep:
                raise ValueError(f"expected <index>:<model>, got {item!r}")
            i = int(idx)
            if not 0 <= i < self.n_nodes:
                raise ValueError(f"node index {i} outside 0..{self.n_nodes - 1}")
            out.append((i, netsim.FaultModel.parse(kind)))
        return tuple(out)

    def dbn_arch(self) -> dbn.DbnArch:
        return dbn.DbnArch(
            layer_sizes=self.arch,
            pretrain_epochs=self.pretrain_epochs,
            finetune_epochs=self.finetune_epochs,
            batch_size=self.batch_size,
            rng_seed=self.seed,
            pretrain_scale=self.pretrain_scale,
        )

    def network_config(self) -> netsim.NetworkConfig:
        return netsim.NetworkConfig(
            n_nodes=self.n_nodes,
            difficulty=self.difficulty,
            threshold=self.threshold,
            alpha=self.alpha,
            t_min=self.t_min,
            seed=self.seed,
            faults=self.fault_table(),
        )


def _parse_arch(text: str) -> tuple[int, ...]:
    return tuple(int(s) for s in text.replace(" ", "").split(",") if s)


_CONVERTERS = {
    "arch": _parse_arch,
    "pretrain_epochs": int,
    "finetune_epochs": int,
    "batch_size": int,
    "pretrain_scale": float,
    "seed": int,
    "difficulty": int,
    "threshold": float,
    "alpha": float,
    "t_min": float,
    "n_nodes": int,
    "faults": str,
    "manifest": str,
    "network": str,
    "synthetic_per_class": int,
}


def parse_config_text(text: str, base: AppConfig | None = None, base_dir: str = ".") -> AppConfig:
    """``key = value`` lines, ``#`` comments. Relative paths resolve against ``base_dir``."""
    cfg = base or AppConfig()
    updates = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip().replace("-", "_"), value.strip()
        if not sep or key not in _CONVERTERS:
            raise UsageError(f"config line {n}: unknown or malformed entry {line!r}")
        try:
            updates[key] = _CONVERTERS[key](value)
        except ValueError:
            raise UsageError(f"config field {key}: cannot parse {value!r}") from None
        if key in ("manifest", "network"):
            p = Path(value)
            updates[key] = str(p if p.is_absolute() else Path(base_dir) / p)
    return replace(cfg, **updates)


def build_config(args) -> AppConfig:
    cfg = AppConfig()
    if getattr(args, "config", None):
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        cfg = parse_config_text(text, cfg, str(Path(args.config).parent))
    overrides = {}
    for f in fields(AppConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            overrides[f.name] = value
    return replace(cfg, **overrides).validate()


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config_flags(p: argparse.ArgumentParser, net: bool = False):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--arch", type=_parse_arch, help="comma-separated layer sizes, input first")
    p.add_argument("--pretrain-epochs", dest="pretrain_epochs", type=int)
    p.add_argument("--finetune-epochs", dest="finetune_epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--pretrain-scale", dest="pretrain_scale", type=float)
    p.add_argument("--threshold", type=float)
    if net:
        p.add_argument("--difficulty", type=int)
        p.add_argument("--n-nodes", dest="n_nodes", type=int)
        p.add_argument("--alpha", type=float)
        p.add_argument("--t-min", dest="t_min", type=float)
        p.add_argument("--faults")
        p.add_argument("--synthetic-per-class", dest="synthetic_per_class", type=int)


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dbnfw", description="Decentralised DBN malware firewall")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("convert", help="render a file as a byteplot PGM")
    s.add_argument("input")
    s.add_argument("--out", required=True)
    s.add_argument("--size", type=int, default=64)

    s = sub.add_parser("synth-data", help="write the synthetic two-texture corpus")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--per-class", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("train", help="train one detection engine")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    _config_flags(s)

    s = sub.add_parser("eval", help="accuracy and TPR over a manifest")
    s.add_argument("--model", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--threshold", type=float, default=0.5)

    s = sub.add_parser("classify", help="malicious probability of one file")
    s.add_argument("--model", required=True)
    s.add_argument("file")
    s.add_argument("--threshold", type=float, default=0.5)

    s = sub.add_parser("provision", help="train a uniquely seeded engine per node")
    s.add_argument("--manifest")
    s.add_argument("--out-dir", required=True)
    _config_flags(s, net=True)

    s = sub.add_parser("simulate", help="run a scenario through the simulated network")
    s.add_argument("--scenario", required=True)
    s.add_argument("--out", help="transcript path (stdout if omitted)")
    s.add_argument("--chain-out", help="also write the resulting chain log here")
    s.add_argument("--network", help="directory written by `provision`")
    s.add_argument("--manifest")
    _config_flags(s, net=True)

    s = sub.add_parser("chain-verify", help="check a chain log")
    s.add_argument("file")
    s.add_argument("--keys", help="keys.tsv from `provision`; without it tags are not checked")
    s.add_argument("--difficulty", type=int, default=chain_mod.DEFAULT_DIFFICULTY)

    s = sub.add_parser("chain", help="chain utilities (`chain verify <file>`)")
    s.add_argument("action", choices=["verify"])
    s.add_argument("file")
    s.add_argument("--keys")
    s.add_argument("--difficulty", type=int, default=chain_mod.DEFAULT_DIFFICULTY)
    return p


def _out(line: str = ""):
    sys.stdout.write(line + "\n")


def cmd_convert(args) -> int:
    if args.size < 1:
        raise UsageError("--size must be >= 1")
    try:
        data = Path(args.input).read_bytes()
    except OSError as exc:
        raise FirewallError(f"{args.input}: {exc}") from exc
    img = imgcodec.downscale(imgcodec.bytes_to_image(data), args.size, args.size)
    Path(args.out).write_bytes(imgcodec.encode_pgm(img))
    _out(f"{args.out}\t{img.width}x{img.height}")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.per_class < 1:
        raise UsageError("--per-class must be >= 1")
    dataset.write_synthetic_corpus(args.out_dir, args.per_class, args.seed)
    _out(str(Path(args.out_dir) / "manifest.tsv"))
    return EXIT_OK


def _training_data(cfg: AppConfig, manifest: str | None):
    side = imgcodec.side_for_inputs(cfg.arch[0])
    if manifest:
        X, y, failures = dataset.load_vectors(dataset.load_manifest(manifest), side)
        for path, why in failures:
            print(f"skipped {path}: {why}", file=sys.stderr)
        return X, y
    if cfg.synthetic_per_class:
        return dataset.synthetic_corpus(cfg.synthetic_per_class, cfg.seed, side)
    raise UsageError("no training data: give a manifest or synthetic_per_class")


def cmd_train(args) -> int:
    cfg = build_config(args)
    X, y = _training_data(cfg, args.manifest)
    model = dbn.train(cfg.dbn_arch(), X, y)
    dbn.save_model(model, args.out)
    _out(f"{args.out}\t{model.digest()}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if not 0 < args.threshold < 1:
        raise UsageError("--threshold must lie in (0, 1)")
    model = dbn.load_model(args.model)
    report = dataset.evaluate(model, dataset.load_manifest(args.manifest), args.threshold)
    for path, why in report.failures:
        print(f"unreadable {path}: {why}", file=sys.stderr)
    for line in report.lines():
        _out(line)
    return EXIT_OK


def cmd_classify(args) -> int:
    if not 0 < args.threshold < 1:
        raise UsageError("--threshold must lie in (0, 1)")
    model = dbn.load_model(args.model)
    x = imgcodec.read_file_vector(args.file, imgcodec.side_for_inputs(model.n_inputs))
    p = dbn.predict_malicious(model, x)
    _out(f"{p:.6f}\t{decide(p, args.threshold).value}")
    return EXIT_OK


def cmd_provision(args) -> int:
    cfg = build_config(args)
    X, y = _training_data(cfg, args.manifest or cfg.manifest)
    net = netsim.provision(cfg.network_config(), cfg.dbn_arch(), X, y)
    netsim.save_network(net, args.out_dir)
    for node in net.nodes:
        _out(f"{node.node_id}\t{node.model.digest()}\t{node.fault}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = build_config(args)
    try:
        scenario_text = Path(args.scenario).read_text()
    except OSError as exc:
        raise FirewallError(f"{args.scenario}: {exc}") from exc
    try:
        events = netsim.parse_scenario(scenario_text)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    net_dir = args.network or cfg.network
    if net_dir:
        net = netsim.load_network(cfg.network_config(), net_dir)
    else:
        X, y = _training_data(cfg, args.manifest or cfg.manifest)
        net = netsim.provision(cfg.network_config(), cfg.dbn_arch(), X, y)
    transcript = netsim.run_scenario(net, events, Path(args.scenario).parent)
    text = transcript.text()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.chain_out:
        Path(args.chain_out).write_bytes(chain_mod.encode_chain(net.chain.blocks))

    check = net.chain.verify()
    if not check:
        print(f"chain invalid at block {check.first_bad_index}: {check.reason}", file=sys.stderr)
        return EXIT_INVARIANT
    node_ids = [n.node_id for n in net.nodes]
    for r in transcript.rounds:
        audited = netsim.audit_round(net.chain.blocks, r.round, node_ids, cfg.alpha, cfg.t_min)
        if audited != r.mean:
            print(f"round {r.round}: chain audit gives {audited!r}, round reported {r.mean!r}", file=sys.stderr)
            return EXIT_INVARIANT
    return EXIT_OK


def cmd_chain_verify(args) -> int:
    try:
        blob = Path(args.file).read_bytes()
    except OSError as exc:
        raise FirewallError(f"{args.file}: {exc}") from exc
    keys = netsim.load_keys(args.keys) if args.keys else None
    if keys is None:
        print("no --keys given: verdict tags not checked", file=sys.stderr)
    check = chain_mod.verify_chain_bytes(blob, keys, args.difficulty)
    if check:
        _out(f"valid\t{len(chain_mod.decode_chain(blob))}")
        return EXIT_OK
    _out(f"invalid\t{check.first_bad_index}")
    print(check.reason, file=sys.stderr)
    return EXIT_FAILURE


COMMANDS = {
    "convert": cmd_convert,
    "synth-data": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "classify": cmd_classify,
    "provision": cmd_provision,
    "simulate": cmd_simulate,
    "chain-verify": cmd_chain_verify,
    "chain": cmd_chain_verify,
}


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"dbnfw: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FirewallError, ValueError) as exc:
        print(f"dbnfw: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
