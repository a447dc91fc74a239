"""Smoke test for the alsgd extension module."""

import math

import alsgd


def main():
    cfg = alsgd.Config(
        "task.num_points = 512\n"
        "task.eval_points = 64\n"
        "model.hidden = 8\n"
        "sched.h = 10\n"
        "sched.t_max = 200\n"
    )
    cfg.set("outer.strategy", "delayed_nesterov")
    cfg.set("sched.dylu", "true")
    assert alsgd.Config(cfg.to_text()).to_text() == cfg.to_text()

    rows = alsgd.run(cfg)
    assert rows[0]["server_update"] == 0
    assert rows == alsgd.run(cfg), "runs must be deterministic"
    assert rows[-1]["eval_loss"] < rows[0]["eval_loss"]
    print(f"{cfg!r}: {len(rows)} rows, final loss {rows[-1]['eval_loss']:.4f}")

    try:
        cfg.set("outer.momentum", "0.9")
    except ValueError as err:
        assert "outer.momentum" in str(err)
    else:
        raise AssertionError("unknown key accepted")

    mlp = alsgd.Mlp(input_dim=3, hidden=[5], num_classes=3, activation="tanh")
    params = mlp.init_params(7)
    assert len(params) == mlp.num_params
    x = [[0.1, -0.4, 0.9], [1.2, 0.3, -0.7]]
    y = [0, 2]
    loss, grad = mlp.gradient(params, x, y)
    fd = mlp.finite_diff_gradient(params, x, y)
    assert math.isclose(loss, mlp.loss(params, x, y))
    assert max(abs(a - b) for a, b in zip(grad, fd)) < 1e-6

    assert alsgd.dylu_steps(1.0, 4.0, 50) == 12
    assert math.isclose(sum(alsgd.shard_probabilities([100, 1000], [0, 0])), 1.0)
    assert math.isclose(alsgd.lr_at(1.0, 0.1, 10, 100, 10), 1.0)
    m, _ = alsgd.nesterov_closed_form([0.0], [1.0], 0.5)
    assert math.isclose(m[0], 1.875)

    for name, dev, tol, passed in alsgd.validate():
        print(f"{'PASS' if passed else 'FAIL'} {name}: {dev:e} <= {tol:e}")
        assert passed
    print("smoke test ok")


if __name__ == "__main__":
    main()
