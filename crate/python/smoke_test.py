"""Smoke test for the bpsim extension module.

Build and install first:  pip install --no-build-isolation ./crates/py
"""

import bpsim


def main():
    assert "multihop7" in bpsim.builtin_names()

    tandem = bpsim.Scenario.load("tandem")
    assert (tandem.queue_count, tandem.state_count) == (2, 3)
    assert abs(sum(tandem.stationary) - 1.0) < 1e-12
    again = bpsim.Scenario.from_toml(tandem.to_toml())
    assert again.to_toml() == tandem.to_toml()

    d = bpsim.bp_decide(tandem, 1, [40.0, 3.0], 10.0)
    assert d["action_index"] == bpsim.bp_decide(tandem, 1, [40.0, 3.0], 10.0, decomposed=True)["action_index"]

    sol = bpsim.solve_dual(tandem, 100.0)
    assert sol["converged"] and all(g >= 0 for g in sol["gamma_star"])
    ev = bpsim.dual_value(tandem, sol["gamma_star"], 100.0)
    assert abs(ev["value"] - sol["g_value"]) < 1e-6 * abs(sol["g_value"])

    net = bpsim.load_scenario("multihop7")
    assert bpsim.check_slackness(net)["eta"] > 0
    assert not bpsim.check_slackness(bpsim.load_scenario("multihop7_overload"))["feasible"]

    gamma = bpsim.solve_dual(net, 50.0)["gamma_star"]
    lifo = bpsim.run(net, 50.0, "lifo", horizon=50_000, seed=2, gamma_star=gamma)
    fifo = bpsim.run(net, 50.0, "fifo", horizon=50_000, seed=2, gamma_star=gamma)
    assert lifo["avg_cost"] == fifo["avg_cost"]
    assert lifo["delay_mean"] < fifo["delay_mean"]
    assert lifo["injected"] == lifo["delivered"] + lifo["undelivered"] + lifo["dropped"]

    aux = bpsim.load_scenario("aux_demo")
    rep = bpsim.aux_run(aux, 20.0, horizon=20_000)
    assert rep["z_bar"][0] <= rep["y_bar"][0] + 0.01

    try:
        bpsim.Scenario.load("no_such_scenario.toml")
    except ValueError:
        pass
    else:
        raise AssertionError("missing file should raise ValueError")

    print(f"ok: tandem gamma* = {sol['gamma_star']}, multihop7 V=50 delay lifo {lifo['delay_mean']:.1f} fifo {fifo['delay_mean']:.1f}")


if __name__ == "__main__":
    main()
