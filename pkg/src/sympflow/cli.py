"""Command-line entry point.

Subcommands: train, rollout, energy-drift, check. Exit codes: 0 success,
1 usage/config error, 2 numerical or training failure, 3 invariant-check
failure. Output files are written atomically (temporary file + rename), so a
failed run leaves no partial outputs.

Heavy imports happen after thread-count environment variables are set, so
--threads takes effect for fresh processes.
"""

import argparse
import json
import os
import sys
import tempfile

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_CHECK_FAILED = 3

TRAJECTORY_SCHEMA = "t, q1..qd, p1..pd, energy"
DRIFT_SCHEMA = "method, t, drift"
LOSS_SCHEMA = "epoch, loss_total, loss_pi, loss_match"

CONFIG_SCHEMA_HELP = """\
Config file (JSON):
  {
    "system": "harmonic" | "henon-heiles",
    "model": {
      "type": "sympflow" | "baseline",
      "pairs": 3,                # sympflow only
      "widths": [32, 32],
      "activation": "tanh"
    },
    "training": {
      "dt": 1.0, "n_pi": 2048, "n_match": 2048, "epochs": 2000,
      "batch_size": 256, "learning_rate": 1e-3,
      "beta1": 0.9, "beta2": 0.999, "eps": 1e-8,
      "w_pi": 1.0, "w_match": 1.0, "seed": 0
    }
  }
Omitted training keys fall back to the documented defaults.
"""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _UsageError(ValueError):
    pass


def _atomic_write(path, write_fn):
    """Write via temp file + rename so failures leave nothing behind."""
    out_dir = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".tmp")
    os.close(fd)
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise _UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise _UsageError(f"malformed config {path}: {exc}")
    if not isinstance(cfg, dict) or "system" not in cfg:
        raise _UsageError("config must be a JSON object with a 'system' entry")
    return cfg


def _build_from_config(cfg, seed_override=None):
    from .flows import SympFlowModel
    from .potential import BaselineFlowNet
    from .systems import get_system
    from .training import TrainingConfig

    system = get_system(cfg["system"])
    tr = dict(cfg.get("training", {}))
    if seed_override is not None:
        tr["seed"] = seed_override
    try:
        tconf = TrainingConfig(**tr)
    except TypeError as exc:
        raise _UsageError(f"bad training section: {exc}")
    m = dict(cfg.get("model", {}))
    kind = m.get("type", "sympflow")
    widths = m.get("widths", [32, 32])
    activation = m.get("activation", "tanh")
    if kind == "sympflow":
        model = SympFlowModel(
            system.dim,
            n_pairs=int(m.get("pairs", 3)),
            widths=widths,
            activation=activation,
            dt=tconf.dt,
            seed=tconf.seed,
        )
    elif kind == "baseline":
        model = BaselineFlowNet(
            system.dim, widths, activation=activation, seed=tconf.seed, dt=tconf.dt
        )
    else:
        raise _UsageError(f"unknown model type '{kind}'")
    return system, model, tconf


def _parse_x0(text, dim):
    import numpy as np

    try:
        vals = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise _UsageError(f"could not parse state '{text}' (expected comma-separated floats)")
    if vals.size != 2 * dim:
        raise _UsageError(f"state has {vals.size} entries, expected {2 * dim}")
    return vals


_DEFAULT_X0 = {"harmonic": "1,0", "henon-heiles": "0.1,-0.1,0.1,0.1"}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_train(args):
    from .flows import save_checkpoint
    from .training import train, write_loss_history

    if not args.config:
        raise _UsageError("train requires --config")
    cfg = _load_config(args.config)
    system, model, tconf = _build_from_config(cfg, args.seed)
    model, history = train(model, system, tconf)
    os.makedirs(args.out, exist_ok=True)
    ck_path = os.path.join(args.out, "checkpoint.json")
    loss_path = os.path.join(args.out, "loss_history.csv")
    _atomic_write(ck_path, lambda p: save_checkpoint(p, model, system.name))
    _atomic_write(loss_path, lambda p: write_loss_history(p, history))
    if history:
        _, total, pi, match = history[-1]
        print(f"final losses: total={total:.6e} pi={pi:.6e} match={match:.6e}")
    else:
        print("no epochs run; checkpoint equals the initialisation")
    print(f"wrote {ck_path}")
    print(f"wrote {loss_path}")
    return EXIT_OK


def _rollout_grid(args, model, system):
    import numpy as np

    from .flows import rollout_states

    x0 = _parse_x0(args.x0 or _DEFAULT_X0.get(system.name, ""), system.dim)
    n = 1 if args.t_final == 0 else args.samples
    times, states = rollout_states(model, args.t_final, x0, n)
    energies = np.atleast_1d(system.energy(states))
    return x0, times, states, energies


def cmd_rollout(args):
    from .flows import load_checkpoint, write_trajectory_csv
    from .integrators import rk45_sample
    from .systems import get_system

    model, meta = load_checkpoint(args.checkpoint)
    system = get_system(meta["system"])
    x0, times, states, energies = _rollout_grid(args, model, system)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "rollout.csv")
    _atomic_write(out_path, lambda p: write_trajectory_csv(p, times, states, energies))
    print(f"wrote {out_path} ({times.size} rows, schema: {TRAJECTORY_SCHEMA})")
    if args.with_rk45:
        ref = rk45_sample(system, x0, times)
        ref_path = os.path.join(args.out, "rollout_rk45.csv")
        _atomic_write(
            ref_path, lambda p: write_trajectory_csv(p, times, ref, system.energy(ref))
        )
        print(f"wrote {ref_path}")
    return EXIT_OK


def cmd_energy_drift(args):
    import numpy as np

    from .flows import load_checkpoint, rollout_states
    from .integrators import rk45_sample
    from .systems import get_system

    if not args.checkpoints and not args.with_exact and not args.with_rk45:
        raise _UsageError("energy-drift needs at least one checkpoint or reference flag")
    rows = []
    system = None
    x0 = None
    times = np.linspace(0.0, args.t_final, args.samples if args.t_final > 0 else 1)

    def add(method, states):
        h0 = float(system.energy(x0))
        drift = np.atleast_1d(system.energy(states)) - h0
        for t, dv in zip(times, drift):
            rows.append((method, float(t), float(dv)))

    seen = {}
    for ck in args.checkpoints:
        model, meta = load_checkpoint(ck)
        if system is None:
            system = get_system(meta["system"])
            x0 = _parse_x0(args.x0 or _DEFAULT_X0.get(system.name, ""), system.dim)
        elif meta["system"] != system.name:
            raise _UsageError("all checkpoints must target the same system")
        label = meta["kind"]
        if label in seen:
            seen[label] += 1
            label = f"{label}-{seen[label]}"
        else:
            seen[label] = 1
        _, states = rollout_states(model, args.t_final, x0, times.size)
        add(label, states)
    if system is None:
        from .systems import get_system as _gs

        system = _gs(args.system)
        x0 = _parse_x0(args.x0 or _DEFAULT_X0.get(system.name, ""), system.dim)
    if args.with_exact:
        if system.exact_flow is None:
            raise _UsageError(f"system '{system.name}' has no closed-form flow")
        states = np.stack([system.exact_flow(t, x0) for t in times])
        add("exact", states)
    if args.with_rk45:
        add("rk45", rk45_sample(system, x0, times))

    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "energy_drift.csv")

    def write(p):
        with open(p, "w", encoding="utf-8") as fh:
            fh.write("method,t,drift\n")
            for method, t, dv in rows:
                fh.write(f"{method},{repr(t)},{repr(dv)}\n")

    _atomic_write(out_path, write)
    print(f"wrote {out_path} (schema: {DRIFT_SCHEMA})")
    return EXIT_OK


def cmd_check(args):
    import numpy as np

    from . import diffeng
    from .flows import SympFlowModel, forward, forward_batch, network_hamiltonian
    from .potential import PotentialNet
    from .systems import j_apply, j_matrix

    rng = np.random.default_rng(args.seed)
    results = []

    def record(name, measured, tol):
        ok = bool(measured <= tol)
        results.append(ok)
        print(f"{'PASS' if ok else 'FAIL'} {name}: measured={measured:.3e} tol={tol:.1e}")

    def random_model(L, d):
        return SympFlowModel(d, n_pairs=L, widths=(6, 5), dt=1.0, seed=int(rng.integers(2**31)))

    def model_map(model, t, X):
        if not args.corrupt:
            return forward_batch(model, t, X)
        # test hook: apply the first position-layer increment to q instead of
        # p, which destroys symplecticity while keeping the map smooth
        from .flows import _stacked_shift

        d = model.dim
        Q, P = X[:, :d].copy(), X[:, d:]
        shift, _, _ = _stacked_shift(model.pairs[0][0].potential, t, Q)
        Q = Q - shift
        return forward_batch(model, t, np.concatenate([Q, P], axis=1))

    # symplecticity of the flow Jacobian
    worst = 0.0
    for L in (1, 2, 3):
        for d in (1, 2):
            model = random_model(L, d)
            t = float(rng.uniform(0.2, 1.0))
            x = rng.uniform(-1, 1, 2 * d)
            M = diffeng.fd_jacobian(lambda v: model_map(model, t, v[None, :])[0], x, 1e-5)
            J = j_matrix(d)
            worst = max(worst, np.abs(M.T @ J @ M - J).max())
    record("symplecticity |M^T J M - J|", worst, 1e-5)

    # identity at t = 0 (exact)
    worst = 0.0
    for _ in range(20):
        model = random_model(int(rng.integers(1, 4)), int(rng.integers(1, 3)))
        x = rng.uniform(-1, 1, 2 * model.dim)
        worst = max(worst, np.abs(forward(model, 0.0, x) - x).max())
    record("identity at t=0", worst, 0.0)

    # flow rate matches the extracted Hamiltonian's vector field
    worst = 0.0
    for _ in range(10):
        model = random_model(int(rng.integers(1, 4)), int(rng.integers(1, 3)))
        t = float(rng.uniform(0.2, 1.0))
        x = rng.uniform(-1, 1, 2 * model.dim)
        psi = forward(model, t, x)
        h = 1e-5
        lhs = (forward(model, t + h, x) - forward(model, t - h, x)) / (2 * h)
        g = diffeng.fd_gradient(lambda v: network_hamiltonian(model, t, v), psi, 1e-5)
        rhs = j_apply(g, model.dim)
        worst = max(worst, np.linalg.norm(lhs - rhs) / (1.0 + np.linalg.norm(rhs)))
    record("extracted-Hamiltonian consistency", worst, 1e-4)

    # derivative engine vs central differences
    net = PotentialNet(2, (6, 5), seed=int(rng.integers(2**31)))
    t = 0.37
    z = rng.uniform(-1, 1, 2)
    g = diffeng.grad_input(net, t, z)
    g_fd = diffeng.fd_gradient(lambda v: _net_value(net, t, v), z, 1e-5)
    worst = np.abs(g - g_fd).max() / (1.0 + np.abs(g_fd).max())
    tp = diffeng.time_partial(net, t, z)
    tp_fd = _fd_time(net, t, z, 1e-5)
    worst = max(worst, abs(tp - tp_fd) / (1.0 + abs(tp_fd)))
    mx = diffeng.mixed_grad_time(net, t, z)
    mx_fd = diffeng.fd_gradient(lambda v: _fd_time(net, t, v, 1e-4), z, 1e-4)
    worst = max(worst, np.abs(mx - mx_fd).max() / (1.0 + np.abs(mx_fd).max()))
    record("derivative engine vs finite differences", worst, 1e-4)

    if all(results):
        print("all checks passed")
        return EXIT_OK
    return EXIT_CHECK_FAILED


def _net_value(net, t, z):
    from .potential import eval_potential

    return eval_potential(net, t, z)


def _fd_time(net, t, z, h):
    return (_net_value(net, t + h, z) - _net_value(net, t - h, z)) / (2.0 * h)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to a JSON run configuration")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="BLAS thread count (default 1)")

    parser = _Parser(
        prog="sympflow",
        description="Symplectic neural flow maps for Hamiltonian systems.",
        epilog=CONFIG_SCHEMA_HELP
        + f"\nCSV schemas: trajectory ({TRAJECTORY_SCHEMA}); drift ({DRIFT_SCHEMA}); "
        f"loss history ({LOSS_SCHEMA}).",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("train", parents=[common], help="train a model from a config file")

    p = sub.add_parser("rollout", parents=[common], help="long-horizon rollout of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--t-final", type=float, required=True)
    p.add_argument("--x0", help="comma-separated initial state (default per system)")
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--with-rk45", action="store_true", help="also write the adaptive reference")

    p = sub.add_parser(
        "energy-drift", parents=[common], help="energy drift H(psi_t(x0)) - H(x0) per method"
    )
    p.add_argument("--checkpoints", nargs="*", default=[])
    p.add_argument("--t-final", type=float, required=True)
    p.add_argument("--x0")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--system", default="harmonic", help="system when no checkpoint is given")
    p.add_argument("--with-exact", action="store_true")
    p.add_argument("--with-rk45", action="store_true")

    p = sub.add_parser("check", parents=[common], help="run the invariant suite")
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)

    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE

    threads = str(max(1, args.threads))
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, threads)
    if args.command == "check" and args.seed is None:
        args.seed = 0

    from .errors import IntegrationError, NumericalError

    handlers = {
        "train": cmd_train,
        "rollout": cmd_rollout,
        "energy-drift": cmd_energy_drift,
        "check": cmd_check,
    }
    try:
        return handlers[args.command](args)
    except _UsageError as exc:
        print(f"sympflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError, KeyError) as exc:
        print(f"sympflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, IntegrationError) as exc:
        print(f"sympflow: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
