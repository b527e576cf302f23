import math

import numpy as np
import pytest

import safegrid as sg
from safegrid.errors import ConfigError
from safegrid.network import TWO_PI, BusSpec, LineSpec, NetworkSpec


def make_bus(i, kind="droop-inverter", **kw):
    if kind == "droop-inverter":
        kw.setdefault("lambda_p_hz_per_pu", 2.43)
        kw.setdefault("tau_s", 0.5)
    else:
        kw.setdefault("inertia", 0.4)
        kw.setdefault("damping", 0.8)
    return BusSpec(id=i, kind=kind, **kw)


def make_spec(n_buses, lines, **bus_kw):
    buses = tuple(make_bus(i, **bus_kw) for i in range(n_buses))
    specs = tuple(LineSpec(from_bus=i, to_bus=j, r_pu=r, x_pu=x)
                  for i, j, r, x in lines)
    return NetworkSpec(buses=buses, lines=specs, desired_frequency_hz=60.0)


class TestParse:
    def test_fourbus_document(self, fourbus_spec):
        assert fourbus_spec.n == 4
        assert len(fourbus_spec.lines) == 3
        assert fourbus_spec.desired_frequency_hz == 60.0
        assert fourbus_spec.buses[0].kind == "synchronous-generator"

    def test_single_bus_no_lines_accepted(self):
        spec = make_spec(1, [])
        assert spec.n == 1

    def test_disconnected_rejected(self):
        with pytest.raises(ConfigError, match="disconnected"):
            make_spec(2, [])

    def test_duplicate_line_rejected(self):
        with pytest.raises(ConfigError, match="duplicate line"):
            make_spec(3, [(0, 1, 0.0, 1.0), (1, 2, 0.0, 1.0), (1, 0, 0.0, 1.0)])

    def test_gapped_ids_rejected(self):
        buses = (make_bus(0), make_bus(2))
        with pytest.raises(ConfigError, match="no gaps"):
            NetworkSpec(buses=buses, lines=(), desired_frequency_hz=60.0)

    def test_missing_field_names_entity(self):
        with pytest.raises(ConfigError, match="bus 1.*tau_s"):
            BusSpec(id=1, kind="droop-inverter", lambda_p_hz_per_pu=2.43)

    def test_nonpositive_parameter_names_entity(self):
        with pytest.raises(ConfigError, match="bus 0.*non-positive"):
            make_bus(0, voltage_pu=0.0)
        with pytest.raises(ConfigError, match="line.*non-positive"):
            LineSpec(from_bus=0, to_bus=1, r_pu=0.0, x_pu=0.0)

    def test_unknown_field_rejected(self):
        doc = {"desired_frequency_hz": 60.0, "lines": [],
               "buses": [{"id": 0, "kind": "synchronous-generator",
                          "inertia": 1.0, "damping": 1.0, "bogus": 1}]}
        with pytest.raises(ConfigError, match="bogus"):
            sg.parse_network(doc)

    def test_round_trip(self, fourbus_spec):
        text = sg.serialize_network(fourbus_spec)
        assert sg.parse_network(text) == fourbus_spec

    def test_round_trip_with_offsets(self):
        spec = make_spec(2, [(0, 1, 1e-3, 5e-3)], g_shunt_pu=0.2,
                         theta0_rad=0.05)
        assert sg.parse_network(sg.serialize_network(spec)) == spec


class TestLineCoupling:
    def test_pure_reactance(self):
        assert sg.line_coupling(LineSpec(0, 1, 0.0, 1.0)) == 1.0
        assert sg.line_coupling(LineSpec(0, 1, 0.0, 0.5)) == 2.0

    def test_complex_reciprocal_oracle(self):
        r, x = 2.5e-3, 8.7e-3
        expected = -np.imag(1.0 / complex(r, x))
        got = sg.line_coupling(LineSpec(0, 1, r, x))
        assert got == pytest.approx(expected, rel=1e-14)
        assert got == pytest.approx(106.175, rel=1e-4)


class TestInertiaDamping:
    def test_inverter_droop_arithmetic(self):
        bus = make_bus(1, tau_s=0.5, lambda_p_hz_per_pu=2.43)
        m, d = sg.inertia_damping(bus)
        # pre-conversion values are tau/lambda and 1/lambda
        assert m * TWO_PI == pytest.approx(0.5 / 2.43, rel=1e-14)
        assert d * TWO_PI == pytest.approx(1.0 / 2.43, rel=1e-14)
        assert m / d == pytest.approx(0.5, rel=1e-14)  # ratio is tau, unit-free

    def test_generator_passthrough(self):
        bus = make_bus(0, kind="synchronous-generator", inertia=0.4, damping=0.8)
        assert sg.inertia_damping(bus) == (0.4, 0.8)

    def test_identity_droop(self):
        bus = make_bus(1, tau_s=1.0, lambda_p_hz_per_pu=1.0)
        m, d = sg.inertia_damping(bus)
        assert m == pytest.approx(1.0 / TWO_PI)
        assert d == pytest.approx(1.0 / TWO_PI)


class TestLaplacian:
    def test_symmetric_pair(self):
        spec = make_spec(2, [(0, 1, 0.0, 1.0)], voltage_pu=1.0)
        lap = sg.assemble_laplacian(spec)
        assert np.array_equal(lap, np.array([[1.0, -1.0], [-1.0, 1.0]]))

    def test_fourbus_zero_pattern(self, fourbus_spec):
        lap = sg.assemble_laplacian(fourbus_spec)
        for i, j in [(1, 2), (1, 3), (0, 3)]:
            assert lap[i, j] == 0.0
            assert lap[j, i] == 0.0
        for i, j in [(0, 1), (0, 2), (2, 3)]:
            assert lap[i, j] < 0.0

    @pytest.mark.parametrize("seed", range(20))
    def test_eigen_invariants(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 9))
        # random spanning tree plus extra edges keeps the graph connected
        lines = [(i, int(rng.integers(0, i)), float(rng.uniform(0, 2e-3)),
                  float(rng.uniform(1e-3, 2e-2))) for i in range(1, n)]
        extra = {(min(a, b), max(a, b)) for a, b in
                 ((int(rng.integers(0, n)), int(rng.integers(0, n)))
                  for _ in range(n))}
        used = {(min(i, j), max(i, j)) for i, j, _, _ in lines}
        for a, b in extra:
            if a != b and (a, b) not in used:
                lines.append((a, b, 0.0, float(rng.uniform(1e-3, 1e-2))))
                used.add((a, b))
        spec = make_spec(n, lines,
                         voltage_pu=float(rng.uniform(0.9, 1.1)))
        lap = sg.assemble_laplacian(spec)
        assert np.linalg.norm(lap - lap.T) == 0.0
        assert np.abs(lap.sum(axis=1)).max() <= 1e-12 * max(1.0, np.abs(lap).max())
        eigs = np.linalg.eigvalsh(lap)
        scale = max(1.0, eigs.max())
        assert eigs.min() >= -1e-12 * scale
        assert np.count_nonzero(eigs < 1e-9 * scale) == 1


class TestStateSpace:
    def test_fourbus_shapes(self, fourbus_model):
        assert fourbus_model.A.shape == (8, 8)
        assert fourbus_model.B1.shape == (8, 4)
        assert fourbus_model.B2.shape == (8, 4)

    def test_block_structure(self, fourbus_model):
        n = fourbus_model.n
        a = fourbus_model.A
        assert np.array_equal(a[:n, :n], np.zeros((n, n)))
        assert np.array_equal(a[:n, n:], np.eye(n))

    def test_blocks_reproduce_m_d_l(self, fourbus_model):
        n = fourbus_model.n
        m = fourbus_model.m_diag
        assert np.array_equal(fourbus_model.A[n:, :n], -fourbus_model.L / m[:, None])
        assert np.array_equal(fourbus_model.A[n:, n:], np.diag(-fourbus_model.d_diag / m))
        assert np.array_equal(fourbus_model.B2[n:, :], np.diag(1.0 / m))
        assert np.array_equal(fourbus_model.B1[n:, :],
                              np.diag(fourbus_model.v_diag ** 2 / m))

    def test_single_decoupled_bus(self):
        spec = make_spec(1, [], kind="synchronous-generator",
                         inertia=1.0, damping=1.0)
        model = sg.assemble_state_space(spec)
        assert np.array_equal(model.A, np.array([[0.0, 1.0], [0.0, -1.0]]))
        assert np.array_equal(model.L, np.zeros((1, 1)))


class TestSetpointOffset:
    def test_no_constant_forcing(self):
        spec = make_spec(2, [(0, 1, 0.0, 1.0)], theta0_rad=0.3)
        assert sg.setpoint_offset(spec, 0) == 0.0
        assert sg.setpoint_offset(spec, 1) == 0.0

    def test_shunt_load(self):
        spec = make_spec(1, [], g_shunt_pu=0.2, voltage_pu=1.0)
        assert sg.setpoint_offset(spec, 0) == pytest.approx(-0.2)

    def test_two_bus_angle_offsets(self):
        # theta0 difference 0.1 with unit coupling; the sign follows the
        # PSD-Laplacian orientation (see substitution oracle below)
        buses = (make_bus(0, theta0_rad=0.1), make_bus(1, theta0_rad=0.0))
        spec = NetworkSpec(buses=buses,
                           lines=(LineSpec(0, 1, 0.0, 1.0),),
                           desired_frequency_hz=60.0)
        assert sg.setpoint_offset(spec, 0) == pytest.approx(-0.1)
        assert sg.setpoint_offset(spec, 1) == pytest.approx(+0.1)

    @pytest.mark.parametrize("seed", range(5))
    def test_substitution_oracle(self, seed):
        # Linearized acceleration with P_set = u - c must equal the
        # state-space row exactly: constants cancel.
        rng = np.random.default_rng(seed)
        n = 4
        lines = [(0, 1, 1e-3, 8e-3), (1, 2, 0.0, 5e-3), (2, 3, 2e-3, 9e-3)]
        buses = tuple(make_bus(i, g_shunt_pu=float(rng.uniform(0, 0.5)),
                               theta0_rad=float(rng.uniform(-0.2, 0.2)),
                               voltage_pu=float(rng.uniform(0.9, 1.1)))
                      for i in range(n))
        spec = NetworkSpec(
            buses=buses,
            lines=tuple(LineSpec(*ln) for ln in lines),
            desired_frequency_hz=60.0)
        model = sg.assemble_state_space(spec)
        c = sg.setpoint_offsets(spec)
        theta = rng.uniform(-0.3, 0.3, n)
        u = rng.uniform(-1, 1, n)
        v = np.array([b.voltage_pu for b in spec.buses])
        theta0 = np.array([b.theta0_rad for b in spec.buses])
        g = np.array([b.g_shunt_pu for b in spec.buses])
        m = model.m_diag

        # linearized drawn power, straight from the definitions
        accel = np.zeros(n)
        for i in range(n):
            drawn = g[i] * v[i] ** 2
            for ln in spec.lines:
                if i in (ln.from_bus, ln.to_bus):
                    j = ln.to_bus if ln.from_bus == i else ln.from_bus
                    b = sg.line_coupling(ln)
                    drawn += v[i] * v[j] * b * ((theta[i] - theta[j])
                                                + (theta0[i] - theta0[j]))
            p_set = u[i] - c[i]
            accel[i] = (p_set - drawn) / m[i]

        x = np.concatenate([theta, np.zeros(n)])
        accel_model = (model.A @ x + model.B2 @ u)[n:]
        assert accel == pytest.approx(accel_model, abs=1e-12)
