import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmusplit.grid import (
    DanglingReferenceError,
    DisconnectedNetworkError,
    PowerFlowError,
    SchemaError,
    UnknownBranchError,
    build_ybus,
    bundled_path,
    case_from_dict,
    electrical_power,
    internal_emf,
    kron_reduce,
    load_admittance,
    load_case,
    machine_currents,
    run_power_flow,
    solve_network,
)


def two_bus(p_load=0.0, q_load=0.0, x=0.1, b=0.0, xd=0.2):
    return {
        "base_mva": 100.0,
        "f0_hz": 60.0,
        "buses": [
            {"id": 1, "type": "slack", "v_set": 1.0},
            {"id": 2, "type": "PQ", "p_load": p_load, "q_load": q_load},
        ],
        "branches": [{"from_bus": 1, "to_bus": 2, "r": 0.0, "x": x, "b": b}],
        "machines": [{"bus": 1, "h": 3.0, "xd_prime": xd, "p_sched": 0.0}],
    }


@pytest.fixture(scope="module")
def pf39(case39):
    return run_power_flow(case39)


# --- load_case -----------------------------------------------------------------


def test_ieee39_dimensions(case39):
    assert (case39.n_bus, len(case39.branches), case39.n_machine) == (39, 46, 10)
    assert case39.base_mva == 100.0 and case39.f0_hz == 60.0


def test_machines_sit_on_buses_30_to_39(case39):
    assert [m.bus for m in case39.machines] == list(range(30, 40))
    assert [m.id for m in case39.machines] == list(range(1, 11))


def test_minimal_two_bus_case():
    case = case_from_dict(two_bus())
    assert case.n_machine == 1 and case.n_bus == 2


def test_dangling_branch_reference():
    data = two_bus()
    data["branches"].append({"from_bus": 2, "to_bus": 99, "r": 0.0, "x": 0.1})
    with pytest.raises(DanglingReferenceError, match="99"):
        case_from_dict(data)


def test_dangling_machine_reference():
    data = two_bus()
    data["machines"][0]["bus"] = 7
    with pytest.raises(DanglingReferenceError, match="machine 1"):
        case_from_dict(data)


def test_schema_violation_names_location():
    data = two_bus()
    del data["machines"][0]["h"]
    with pytest.raises(SchemaError, match="machines/0"):
        case_from_dict(data)


@pytest.mark.parametrize("field, value", [("h", 0.0), ("xd_prime", -0.1)])
def test_nonpositive_machine_constants(field, value):
    data = two_bus()
    data["machines"][0][field] = value
    with pytest.raises(SchemaError):
        case_from_dict(data)


def test_two_slacks_rejected():
    data = two_bus()
    data["buses"][1]["type"] = "slack"
    data["machines"].append({"bus": 2, "h": 1.0, "xd_prime": 0.2})
    with pytest.raises(SchemaError, match="slack"):
        case_from_dict(data)


def test_disconnected_network():
    data = two_bus()
    data["buses"].append({"id": 3, "type": "PQ"})
    with pytest.raises(DisconnectedNetworkError, match="3"):
        case_from_dict(data)


def test_out_of_service_branch_counts_as_missing():
    data = two_bus()
    data["branches"][0]["status"] = "out"
    with pytest.raises(DisconnectedNetworkError):
        case_from_dict(data)


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(SchemaError):
        load_case(p)


def test_bundled_file_round_trip(tmp_path, case39):
    data = json.loads(bundled_path("ieee39.json").read_text())
    p = tmp_path / "copy.json"
    p.write_text(json.dumps(data))
    assert load_case(p).machines == case39.machines


# --- power flow ------------------------------------------------------------------


def test_ieee39_power_flow_voltage_band(pf39):
    assert pf39.mismatch < 1e-8
    assert np.all((pf39.vm >= 0.95) & (pf39.vm <= 1.10))


def test_ieee39_matches_published_solution(pf39, case39):
    # standard power-flow oracle (MATPOWER case39 solution)
    vm = {1: 1.0394, 2: 1.0485, 3: 1.0307, 4: 1.0045, 5: 1.0060, 31: 0.9820, 39: 1.0300}
    va = {1: -13.537, 2: -9.785, 3: -12.276, 4: -12.627, 5: -11.192, 31: 0.0}
    for bus, v in vm.items():
        assert pf39.vm[case39.bus_index(bus)] == pytest.approx(v, abs=1e-4)
    for bus, a in va.items():
        assert np.degrees(pf39.va[case39.bus_index(bus)]) == pytest.approx(a, abs=1e-3)
    assert pf39.p_gen[1] * 100 == pytest.approx(677.871, abs=1e-2)


def test_slack_absorbs_imbalance(pf39, case39):
    p_load = sum(b.p_load for b in case39.buses)
    losses = pf39.p_gen.sum() - p_load
    assert 0 < losses < 0.5


def test_two_bus_zero_load_flat_profile():
    pf = run_power_flow(case_from_dict(two_bus()))
    assert np.allclose(pf.vm, 1.0) and np.allclose(pf.va, 0.0)


def test_infeasible_load_fails():
    case = case_from_dict(two_bus(p_load=100 * 5.0, q_load=100 * 2.0))
    with pytest.raises(PowerFlowError):
        run_power_flow(case)


def test_ieee39_heavy_load_fails(case39):
    data = json.loads(bundled_path("ieee39.json").read_text())
    for b in data["buses"]:
        b["p_load"] *= 100
        b["q_load"] *= 100
    with pytest.raises(PowerFlowError):
        run_power_flow(case_from_dict(data))


@settings(max_examples=40, deadline=None)
@given(p=st.floats(0.0, 2.0), q=st.floats(-0.5, 1.0), x=st.floats(0.05, 0.3))
def test_two_bus_mismatch_below_tolerance(p, q, x):
    try:
        pf = run_power_flow(case_from_dict(two_bus(p, q, x)))
    except PowerFlowError:
        return  # beyond the nose of the PV curve
    v = pf.v
    s2 = v[1] * np.conj((v[1] - v[0]) / (1j * x))
    assert abs(s2 + complex(p, q)) < 1e-8


# --- Ybus -------------------------------------------------------------------------


def test_single_line_assembly():
    y = build_ybus(case_from_dict(two_bus(x=0.1))).y
    assert y[0, 1] == pytest.approx(-1 / (1j * 0.1))
    assert y[0, 0] == pytest.approx(1 / (1j * 0.1))


def test_ybus_shape_and_symmetry(case39):
    y = build_ybus(case39).y
    assert y.shape == (39, 39)
    # the case has tap-changing transformers but no phase shifters
    assert np.allclose(y, y.T)


def test_ybus_outage_removes_coupling(case39):
    k16, k17 = case39.bus_index(16), case39.bus_index(17)
    before = build_ybus(case39).y
    after = build_ybus(case39, case39.branch_ids([(16, 17)])).y
    assert before[k16, k17] != 0 and after[k16, k17] == 0
    br = case39.branch((16, 17))
    diff = before[k16, k16] - after[k16, k16]
    assert diff == pytest.approx(1 / complex(br.r, br.x) + 0.5j * br.b)


def test_ybus_unknown_branch(case39):
    with pytest.raises(UnknownBranchError):
        build_ybus(case39, [999])
    with pytest.raises(UnknownBranchError):
        case39.branch((1, 30))


def test_ybus_row_sums_are_shunts_for_untapped_lines():
    data = two_bus(b=0.2)
    y = build_ybus(case_from_dict(data)).y
    assert y.sum(axis=1) == pytest.approx([0.1j, 0.1j])


# --- Kron reduction ---------------------------------------------------------------


def test_one_machine_one_load_reduction():
    p, q, x, xd = 0.5, 0.2, 0.1, 0.2
    case = case_from_dict(two_bus(p, q, x=x, xd=xd))
    pf = run_power_flow(case)
    red = kron_reduce(build_ybus(case), case, pf)
    y_load = complex(p, -q) / pf.vm[1] ** 2
    z = 1j * xd + 1j * x + 1 / y_load
    assert red.y.shape == (1, 1)
    assert red.y[0, 0] == pytest.approx(1 / z, rel=1e-12)


def test_reduced_injections_equal_power_flow(case39, pf39):
    red = kron_reduce(build_ybus(case39), case39, pf39)
    emf = internal_emf(case39, pf39)
    assert red.y.shape == (10, 10)
    assert np.allclose(electrical_power(red.y, emf), pf39.p_gen, atol=1e-8)


def test_recovered_voltages_reproduce_power_flow(case39, pf39):
    red = kron_reduce(build_ybus(case39), case39, pf39)
    v = red.recover @ internal_emf(case39, pf39)
    assert np.max(np.abs(v - pf39.v)) < 1e-8


def test_bolted_fault_collapses_bus_voltage(case39, pf39):
    red = kron_reduce(build_ybus(case39), case39, pf39, {16: -1e6j})
    v = red.recover @ internal_emf(case39, pf39)
    assert abs(v[case39.bus_index(16)]) < 1e-4


def test_unloaded_machine_terminal_equals_emf():
    case = case_from_dict(two_bus())
    pf = run_power_flow(case)
    ybus = build_ybus(case)
    v = solve_network(ybus, case, np.array([1.0 + 0j]), np.zeros(2, dtype=complex))
    assert v == pytest.approx([1.0, 1.0])
    assert machine_currents(case, np.array([1.0 + 0j]), v, ybus.index) == pytest.approx([0.0])
    assert pf.p_gen == pytest.approx([0.0])


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-np.pi, np.pi), min_size=10, max_size=10),
       st.sampled_from([None, 4, 16, 21, 29]))
def test_kron_matches_full_solve(case39, angles, fault_bus):
    pf = run_power_flow(case39)
    shunts = {fault_bus: -1e6j} if fault_bus else {}
    ybus = build_ybus(case39)
    red = kron_reduce(ybus, case39, pf, shunts)
    emf = np.abs(internal_emf(case39, pf)) * np.exp(1j * np.array(angles))
    v_full = solve_network(ybus, case39, emf, load_admittance(case39, pf), shunts)
    assert np.max(np.abs(red.recover @ emf - v_full)) < 1e-8
    p_full = np.real(emf * np.conj(machine_currents(case39, emf, v_full, ybus.index)))
    assert np.max(np.abs(electrical_power(red.y, emf) - p_full)) < 1e-8


# --- islands ------------------------------------------------------------------------


def test_machine_islands_after_cut(case39):
    cut = case39.branch_ids([(14, 15), (16, 17)])
    labels = case39.machine_islands(cut)
    group = {m.id for m, lab in zip(case39.machines, labels) if lab == labels[3]}
    assert group == {4, 5, 6, 7}
