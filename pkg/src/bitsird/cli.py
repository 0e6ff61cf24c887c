"""Batch command-line interface: train, eval, bench, and check.

Run configuration is a line-based `key = value` file with `#` comments.
Unknown keys are rejected (typo safety); every key has a default.

Exit codes: 0 success; 1 failed check/bench gate; 2 bad config key;
3 non-finite loss during training; 4 checkpoint/architecture mismatch;
5 malformed checkpoint or image file.
"""

import argparse
import os
import sys
import time

import numpy as np

from . import bitcore
from .binconv import ConvSpec, binary_conv2d, float_pm1_conv2d_oracle
from .bitcore import pack_bits, sign_quantize, unpack_bits, xnor_dot
from .checkpoint import load_checkpoint, save_checkpoint
from .data import DirectoryDataset, SceneConfig, SyntheticDataset
from .dbconv import DBConvParams, db_conv, db_conv_direct_oracle, param_bits
from .errors import (
    ArchitectureMismatchError,
    BitsirdError,
    ConfigError,
    DivergenceError,
    FormatError,
)
from .grad import SteConfig, approx_error_sq, dysoftsign, dysoftsign_grad
from .metrics import evaluate
from .network import Model, NetConfig
from .train import TrainConfig, predict_probabilities, train_loop

CONFIG_DEFAULTS = {
    "net.stage_channels": "16,32,64",
    "net.blocks": "1,2,5",
    "train.epochs": "60",
    "train.lr": "0.003",
    "train.weight_decay": "0.0001",
    "train.batch": "8",
    "train.seed": "0",
    "data.mode": "synth",
    "data.size": "64",
    "data.count": "200",
    "data.val_count": "50",
    "data.dir": "",
    "ste.surrogate": "dysoftsign",
    "ste.k_init": "0.001",
    "eval.threshold": "0.5",
    "eval.match_dist": "3.0",
}

_INT_KEYS = {"train.epochs", "train.batch", "train.seed", "data.size",
             "data.count", "data.val_count"}
_FLOAT_KEYS = {"train.lr", "train.weight_decay", "ste.k_init",
               "eval.threshold", "eval.match_dist"}
_TUPLE_KEYS = {"net.stage_channels", "net.blocks"}


def parse_config(path=None):
    """Read a key = value file over the defaults; unknown keys are errors."""
    raw = dict(CONFIG_DEFAULTS)
    if path is not None:
        with open(path) as fh:
            for ln, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"line {ln}: expected key = value", key=line)
                key, value = (part.strip() for part in line.split("=", 1))
                if key not in CONFIG_DEFAULTS:
                    raise ConfigError(f"unknown config key {key!r}", key=key)
                raw[key] = value
    cfg = {}
    for key, value in raw.items():
        try:
            if key in _INT_KEYS:
                cfg[key] = int(value)
            elif key in _FLOAT_KEYS:
                cfg[key] = float(value)
            elif key in _TUPLE_KEYS:
                cfg[key] = tuple(int(v) for v in value.split(",") if v.strip())
            else:
                cfg[key] = value
        except ValueError:
            raise ConfigError(f"bad value {value!r} for {key}", key=key) from None
    if cfg["data.mode"] not in ("synth", "dir"):
        raise ConfigError("data.mode must be synth or dir", key="data.mode")
    return cfg


def build_model(cfg):
    net = NetConfig(
        stage_channels=cfg["net.stage_channels"],
        blocks=cfg["net.blocks"],
        surrogate=cfg["ste.surrogate"],
        k_init=cfg["ste.k_init"],
    )
    return Model(net, seed=cfg["train.seed"])


def build_datasets(cfg):
    if cfg["data.mode"] == "dir":
        ds = DirectoryDataset(cfg["data.dir"])
        return ds, ds
    scene = SceneConfig(size=cfg["data.size"], seed=cfg["train.seed"])
    train_ds = SyntheticDataset(scene, 0, cfg["data.count"])
    val_ds = SyntheticDataset(scene, cfg["data.count"], cfg["data.val_count"])
    return train_ds, val_ds


def cmd_train(config_path, out_dir):
    try:
        cfg = parse_config(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    model = build_model(cfg)
    train_ds, val_ds = build_datasets(cfg)
    tc = TrainConfig(
        epochs=cfg["train.epochs"],
        lr=cfg["train.lr"],
        weight_decay=cfg["train.weight_decay"],
        batch_size=cfg["train.batch"],
        seed=cfg["train.seed"],
    )
    try:
        report = train_loop(model, train_ds, val_ds, tc, out_dir=out_dir,
                            eval_threshold=cfg["eval.threshold"],
                            match_dist=cfg["eval.match_dist"])
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    final = report.final
    print(f"wrote {os.path.join(out_dir, 'final.ckpt')}")
    print(f"final: {final.to_line()}")
    print(f"best epoch {report.best_epoch}: miou={report.best.miou:.4f}")
    return 0


def cmd_eval(ckpt_path, config_path, account_only=False, export_binary=None,
             out_path=None):
    try:
        cfg = parse_config(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    model = build_model(cfg)
    size = cfg["data.size"]
    account = model.account((size, size))
    lines = []
    if not account_only:
        try:
            model.load_state_arrays(load_checkpoint(ckpt_path))
        except FormatError as exc:
            print(f"checkpoint format error: {exc}", file=sys.stderr)
            return 5
        except ArchitectureMismatchError as exc:
            print(f"architecture mismatch: {exc}", file=sys.stderr)
            return 4
        _, val_ds = build_datasets(cfg)
        preds = predict_probabilities(model, val_ds, cfg["train.batch"])
        masks = [val_ds.mask(i) for i in range(len(val_ds))]
        scores = evaluate(preds, masks, cfg["eval.threshold"],
                          cfg["eval.match_dist"])
        lines.append(scores.to_table())
        lines.extend(scores.to_kv_lines())
    lines.append(account.to_text())
    lines.extend(account.to_kv_lines())
    text = "\n".join(lines)
    print(text)
    out_path = out_path or (ckpt_path + ".eval.txt" if not account_only else None)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text + "\n")
    if export_binary:
        save_checkpoint(export_binary, model.binary_export_records())
        print(f"wrote binary deployment snapshot: {export_binary} "
              f"({os.path.getsize(export_binary)} bytes)")
    return 0


def _time_best_of(fn, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cmd_bench(sizes=(64, 256), channels=(16, 64)):
    rng = np.random.default_rng(0)
    rows = []
    all_match = True
    for c in channels:
        for s in sizes:
            a = rng.choice([-1.0, 1.0], size=(c, s, s))
            w = rng.choice([-1.0, 1.0], size=(c, c, 3, 3))
            spec = ConvSpec(c, c, 3, 1, 1)
            ap, wp = pack_bits(a), pack_bits(w)
            packed = binary_conv2d(ap, wp, spec)
            dense = float_pm1_conv2d_oracle(a, w, spec)
            match = bool(np.array_equal(packed, dense))
            all_match &= match
            t_packed = _time_best_of(lambda: binary_conv2d(ap, wp, spec))
            t_dense = _time_best_of(lambda: float_pm1_conv2d_oracle(a, w, spec))
            outputs = c * s * s
            rows.append((c, s, match, outputs / t_packed, outputs / t_dense,
                         t_dense / t_packed))
    head = (f"{'c':>4}{'size':>6}{'match':>7}{'packed el/s':>14}"
            f"{'oracle el/s':>14}{'speedup':>9}")
    print(head)
    print("-" * len(head))
    for c, s, match, eps_p, eps_d, sp in rows:
        print(f"{c:>4}{s:>6}{str(match):>7}{eps_p:>14.3e}{eps_d:>14.3e}{sp:>9.2f}")
    if not all_match:
        print("FAIL: packed and oracle kernels disagree", file=sys.stderr)
        return 1
    big = [r for r in rows if r[0] == max(channels) and r[1] == max(sizes)]
    if big and big[0][5] < 2.0:
        print(f"warning: speedup {big[0][5]:.2f}x below the 2x expectation "
              "(machine-dependent, non-fatal)")
    return 0


# ------------------------------------------------------------- check suites


def _ref_sign(x):
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


def _suite_xnor():
    rng = np.random.default_rng(1)
    for trial in range(300):
        n = int(rng.integers(1, 300))
        x = rng.normal(size=n)
        y = rng.normal(size=n)
        x[rng.random(n) < 0.1] = 0.0
        got = xnor_dot(sign_quantize(x), sign_quantize(y))
        want = int(np.dot(_ref_sign(x), _ref_sign(y)))
        if got != want:
            return False, f"xnor_dot trial {trial}: got {got}, want {want}"
    for trial in range(200):
        c = int(rng.integers(1, 4))
        nf = int(rng.integers(1, 4))
        k = int(rng.choice([1, 3]))
        h = int(rng.integers(k, 8))
        w = int(rng.integers(k, 8))
        a = rng.normal(size=(c, h, w))
        a[rng.random((c, h, w)) < 0.1] = 0.0
        wt = rng.normal(size=(nf, c, k, k))
        spec = ConvSpec(c, nf, k, 1, int(rng.choice([0, 1])))
        try:
            spec.out_hw(h, w)
        except BitsirdError:
            continue
        got = binary_conv2d(sign_quantize(a), sign_quantize(wt), spec)
        want = float_pm1_conv2d_oracle(_ref_sign(a), _ref_sign(wt), spec)
        if not np.array_equal(got, want):
            bad = np.argwhere(got != want)[0]
            return False, (
                f"conv trial {trial} at {tuple(bad)}: packed "
                f"{got[tuple(bad)]}, oracle {want[tuple(bad)]}"
            )
    return True, "xnor dot + conv exact on randomized suite"


def _suite_dbconv():
    rng = np.random.default_rng(2)
    for trial in range(300):
        c = int(rng.integers(1, 9))
        a = rng.normal(size=(c, int(rng.integers(1, 6)), int(rng.integers(1, 6))))
        latent = rng.normal(size=c)
        p = DBConvParams(latent)
        w_b, alpha, beta = p.derive()
        dense = alpha * unpack_bits(w_b, dtype=np.float64) + beta
        got = db_conv(a, p)
        want = db_conv_direct_oracle(a, dense)
        err = np.max(np.abs(got - want) / (np.abs(want) + 1e-9))
        if err > 1e-6:
            return False, f"decomposition trial {trial}: rel err {err:.2e}"
    if param_bits("adabin_conv", n=64, c=64, k=3) != 40960:
        return False, "adabin bit count wrong"
    if param_bits("db_conv", c=64) != 128:
        return False, "db bit count wrong"
    return True, "decomposition identity + parameter bit counts"


def _suite_grad():
    rng = np.random.default_rng(3)
    for trial in range(500):
        x = float(rng.normal() * 5)
        k = float(10 ** rng.uniform(-2, 2))
        h = 1e-5 * max(1.0, abs(x))
        fd = (dysoftsign(x + h, k) - dysoftsign(x - h, k)) / (2 * h)
        got = dysoftsign_grad(x, k)
        if abs(got - fd) > 1e-4 * max(abs(fd), abs(got), 1e-9):
            return False, f"dysoftsign grad at x={x}, k={k}: {got} vs fd {fd}"
    from .grad import ste_backward

    x = rng.normal(size=(3, 4, 4))
    up = rng.normal(size=x.shape)
    cfg = SteConfig("dysoftsign", k=np.asarray(0.7))
    gx, gk = ste_backward(x, up, cfg)
    want = up * 0.7 / (1 + np.abs(0.7 * x)) ** 2
    if not np.allclose(gx, want, rtol=1e-7):
        return False, "ste_backward disagrees with the closed form"
    want_k = float(np.sum(up * x / (1 + np.abs(0.7 * x)) ** 2))
    if abs(gk - want_k) > 1e-7 * max(1.0, abs(want_k)):
        return False, "k gradient disagrees with the closed form"
    return True, "surrogate gradients match finite differences + closed forms"


def _suite_bound():
    for k in (0.1, 1.0, 10.0, 100.0):
        val = approx_error_sq(k) * k
        if not 1.96 <= val <= 2.04:
            return False, f"error * k at k={k}: {val:.4f} outside [1.96, 2.04]"
    return True, "squared-error bound scales as 2/k over four decades"


def _suite_account():
    model = Model(NetConfig(stage_channels=(8, 16, 32), blocks=(1, 1, 1)), seed=0)
    rep = model.account((64, 64))
    stem = next(r for r in rep.rows if r.name == "stem")
    if stem.flops_f != 2 * (1 * 9) * 8 * 64 * 64:
        return False, f"stem flops {stem.flops_f} off closed form"
    if rep.params_f != sum(r.params_f for r in rep.rows):
        return False, "totals are not the sum of rows"
    rep2 = model.account((64, 128))
    if rep2.bops_b != 2 * rep.bops_b:
        return False, "doubling the input area did not double binary ops"
    bigger = Model(NetConfig(stage_channels=(8, 16, 32), blocks=(1, 1, 2)), seed=0)
    rep3 = bigger.account((64, 64))
    if not (rep3.params_total > rep.params_total and rep3.ops_total > rep.ops_total):
        return False, "adding a block did not increase Params and OPs"
    return True, "closed-form costs, additivity, area scaling, monotonicity"


CHECK_SUITES = {
    "xnor": _suite_xnor,
    "dbconv": _suite_dbconv,
    "grad": _suite_grad,
    "bound": _suite_bound,
    "account": _suite_account,
}


def cmd_check(suite=None, sign_zero_fault=False):
    if sign_zero_fault:
        bitcore.set_sign_zero_fault(True)
    try:
        names = [suite] if suite else list(CHECK_SUITES)
        failed = []
        for name in names:
            ok, detail = CHECK_SUITES[name]()
            mark = "PASS" if ok else "FAIL"
            print(f"[{mark}] {name}: {detail}")
            if not ok:
                failed.append(name)
        return 1 if failed else 0
    finally:
        bitcore.set_sign_zero_fault(False)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="bitsird",
        description="1-bit XNOR/popcount small-target segmentation engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a config file")
    p_train.add_argument("config", help="key = value run configuration")
    p_train.add_argument("--out", default="run", help="output directory")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("--config", default=None)
    p_eval.add_argument("--account-only", action="store_true",
                        help="print accounting without loading data")
    p_eval.add_argument("--export-binary", default=None, metavar="PATH",
                        help="write a packed-weight deployment snapshot")
    p_eval.add_argument("--out", default=None, help="report file path")

    p_bench = sub.add_parser("bench", help="time packed vs dense kernels")
    p_bench.add_argument("--sizes", type=int, nargs="+", default=[64, 256])
    p_bench.add_argument("--channels", type=int, nargs="+", default=[16, 64])

    p_check = sub.add_parser("check", help="run the verification suites")
    p_check.add_argument("--suite", choices=sorted(CHECK_SUITES), default=None)
    # fault injection for mutation-testing the suites themselves
    p_check.add_argument("--sign-zero-negative", action="store_true",
                         help=argparse.SUPPRESS)

    args = parser.parse_args(argv)
    if args.command == "train":
        return cmd_train(args.config, args.out)
    if args.command == "eval":
        return cmd_eval(args.checkpoint, args.config,
                        account_only=args.account_only,
                        export_binary=args.export_binary, out_path=args.out)
    if args.command == "bench":
        return cmd_bench(tuple(args.sizes), tuple(args.channels))
    return cmd_check(args.suite, args.sign_zero_negative)


if __name__ == "__main__":
    sys.exit(main())
