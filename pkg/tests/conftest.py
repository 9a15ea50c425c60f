import pytest

from spanmon import beam, dsp, fusion, node


@pytest.fixture(scope="session")
def fir_default():
    return dsp.fir_lowpass_design(1000, 40.0, 100)


@pytest.fixture(scope="session")
def demo_scenario():
    return beam.demo_scenario()


@pytest.fixture(scope="session")
def demo_truth(demo_scenario):
    return demo_scenario.simulate()


@pytest.fixture(scope="session")
def demo_node_cfg():
    return node.demo_config()


@pytest.fixture(scope="session")
def demo_session(demo_scenario, demo_truth, demo_node_cfg, fir_default):
    """Conditioned session captured from the demo scenario (shared, read-only)."""
    wd = node.watchdog_stream(demo_truth, demo_node_cfg)
    events = node.run_trigger_loop(
        demo_node_cfg, wd, start_epoch_ms=demo_scenario.start_epoch_ms
    )
    assert events, "demo scenario must trigger"
    sess = node.acquire(
        demo_node_cfg,
        demo_truth,
        events[0],
        env=node.NodeEnvironment(temperature_c=demo_scenario.temperature_c),
        start_epoch_ms=demo_scenario.start_epoch_ms,
    )
    node.condition(sess, demo_node_cfg, fir_spec=fir_default)
    return sess, events[0]


@pytest.fixture(scope="session")
def demo_basis(demo_scenario):
    return fusion.ModeBasis.from_beam(demo_scenario.beam)


@pytest.fixture(scope="session")
def demo_fusion(demo_session, demo_basis):
    sess, _ = demo_session
    return fusion.fuse(sess, demo_basis)


def vehicle_windows(scenario, margin_s=2.0):
    """(index, t_lo, t_hi) spans of each crossing plus a decay margin."""
    for k, load in enumerate(scenario.loads):
        span = scenario.beam.length_m + sum(load.axle_spacings_m)
        yield k, load.arrival_s, load.arrival_s + span / load.speed_mps + margin_s
