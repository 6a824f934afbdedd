import os

import numpy as np
import pytest

from wigner_chasm.config import HARMONIC_OMEGA
from wigner_chasm.errors import CflError, GridError, NumericalError, PmbcError
from wigner_chasm.integrator import (
    GlobalAdvector,
    HarmonicPotential,
    NullPdo,
    StepConfig,
    exact_harmonic_solution,
    make_pdo,
)
from wigner_chasm.phase_space import GaussianWavepacket, build_grid, init_gaussian
from wigner_chasm.pmbc import Side
from wigner_chasm.runtime import (
    PatchedAdvector,
    count_steps,
    decompose,
    make_advector,
    run_simulation,
)
from wigner_chasm.transport import InProcessTransport, ZmqTransport

PHASES = {"pmbc_send", "pmbc_receive", "advect", "correction_send", "correction_receive"}


def test_decompose(make_grid):
    grid = make_grid(dim=3, nx=8, nk=4)
    layouts = decompose(grid, 2)
    assert len(layouts) == 8
    assert [layout.rank for layout in layouts] == list(range(8))
    corner = layouts[0]
    assert corner.patch_id == (0, 0, 0)
    assert corner.slices == (slice(0, 5),) * 3
    assert corner.neighbor(0, Side.LEFT) is None
    assert corner.neighbor(1, Side.RIGHT) == (0, 1, 0)
    assert sorted(corner.neighbors()) == [(0, 0, 1), (0, 1, 0), (1, 0, 0)]
    assert layouts[5].patch_id == (1, 0, 1)
    assert layouts[5].offsets == (4, 0, 4)


@pytest.mark.parametrize("p", [0, 3])
def test_decompose_invalid(make_grid, p):
    with pytest.raises(GridError):
        decompose(make_grid(nx=8), p)


def test_patched_advector_rejects_large_stencil(make_grid):
    with pytest.raises(PmbcError):
        PatchedAdvector(make_grid(nx=120), 4, n_nb=31)


def test_make_advector(make_grid):
    grid = make_grid()
    assert isinstance(make_advector(grid, 1, StepConfig(0.01)), GlobalAdvector)
    with make_advector(grid, 4, StepConfig(0.01, n_nb=20)) as patched:
        assert isinstance(patched, PatchedAdvector)
        assert patched.table.m == 30


def test_patched_matches_global_1d(make_grid):
    grid = make_grid(nx=128)
    field = init_gaussian(grid, (1.0,), (0.5,))
    expected = field.values.copy()
    GlobalAdvector(grid).advect_many([expected], 0.02)
    values = field.values.copy()
    with PatchedAdvector(grid, 4, n_nb=30) as advector:
        advector.advect_many([values], 0.02)
        assert advector.instrumentation.messages > 0
        assert set(advector.instrumentation.phase_seconds) == PHASES
    np.testing.assert_allclose(values, expected, atol=1e-9)


def test_nan_patch_stays_out_of_distant_slopes(make_grid, make_gaussian):
    field = make_gaussian(make_grid(nx=128), center_k=(0.5,))
    with PatchedAdvector(field.grid, 4, n_nb=10) as advector:
        assert advector.table.m == 32
        clean = advector.exchange_pmbc(advector.scatter(field.values), 0)
        patches = advector.scatter(field.values)
        patches[3].block[...] = np.nan
        broken = advector.exchange_pmbc(patches, 0)
    # the last interface reads the NaN patch directly
    assert np.isnan(broken[2][1]).all()
    # every other interface lies more than n_nb nodes away from it
    for rank, side in ((0, 0), (0, 1), (1, 0), (1, 1), (2, 0)):
        assert np.isfinite(broken[rank][side]).all()
        np.testing.assert_array_equal(broken[rank][side], clean[rank][side])


def test_patched_matches_global_3d():
    grid = build_grid(3, (-6.0, 6.0), 40, 2.0, 4)
    field = init_gaussian(grid, (1.0, 0.0, 0.0), (0.5, 0.0, 0.0))
    expected = field.values.copy()
    GlobalAdvector(grid).advect_many([expected], 0.1)
    values = field.values.copy()
    with PatchedAdvector(grid, 2, n_nb=20) as advector:
        advector.advect_many([values], 0.1)
    np.testing.assert_allclose(values, expected, atol=1e-9)


def test_zmq_transport_matches_in_process(app_logger):
    grid = build_grid(3, (-4.0, 4.0), 16, 2.0, 4)
    field = init_gaussian(grid, (0.5, 0.0, 0.0), (0.5, 0.0, 0.0))
    results = []
    for transport in (
        InProcessTransport(),
        ZmqTransport([layout.patch_id for layout in decompose(grid, 2)], logger=app_logger),
    ):
        values = field.values.copy()
        with PatchedAdvector(grid, 2, n_nb=8, transport=transport) as advector:
            advector.advect_many([values], 0.2)
        results.append((values, transport.messages, transport.bytes))
        transport.close()
    (a, messages_a, bytes_a), (b, messages_b, bytes_b) = results
    np.testing.assert_array_equal(a, b)
    assert messages_a == messages_b
    assert bytes_a == bytes_b


def test_patched_run_matches_single_patch_run(make_grid):
    grid = make_grid(nx=160)
    field = init_gaussian(grid, (1.0,), (0.0,))
    step = StepConfig(0.01, HarmonicPotential(HARMONIC_OMEGA), n_nb=30)
    pdo = make_pdo(grid, step.potential)
    packet = GaussianWavepacket((1.0,), (0.0,))

    def reference(t):
        return exact_harmonic_solution(packet, t, HARMONIC_OMEGA, grid)

    single = run_simulation(field, step, pdo, t_final=0.05, reference=reference)
    patched = run_simulation(field, step, pdo, t_final=0.05, patches=4, reference=reference)

    assert single.steps == patched.steps == 5
    np.testing.assert_allclose(patched.field.values, single.field.values, atol=1e-9)
    assert patched.field.time == pytest.approx(0.05)
    assert single.instrumentation.messages == 0
    assert patched.instrumentation.messages > 0
    per_step = patched.instrumentation.bytes_per_step
    assert len(per_step) == 5
    assert len(set(per_step)) == 1
    assert sum(per_step) == patched.instrumentation.bytes
    assert set(patched.instrumentation.phase_seconds) == PHASES
    assert patched.metrics[-1].eps_inf == pytest.approx(single.metrics[-1].eps_inf, abs=1e-9)


def test_repeated_patched_runs_are_bit_identical(tmp_path, make_grid):
    grid = make_grid(nx=160)
    field = init_gaussian(grid, (1.0,), (0.5,))
    step = StepConfig(0.01, HarmonicPotential(HARMONIC_OMEGA), n_nb=30)
    pdo = make_pdo(grid, step.potential)
    results = []
    for name in ("a", "b"):
        results.append(
            run_simulation(
                field,
                step,
                pdo,
                t_final=0.05,
                patches=2,
                transport=InProcessTransport(),
                dump_every=1,
                dump_dir=str(tmp_path / name),
            )
        )
    first, second = results
    assert len(first.dumps) == len(second.dumps) == 6
    for a, b in zip(first.dumps, second.dumps):
        with open(a, "rb") as fa, open(b, "rb") as fb:
            assert fa.read() == fb.read()
    assert np.array_equal(first.field.values, second.field.values)


def test_run_records_and_dumps(tmp_path, make_gaussian):
    field = make_gaussian()
    result = run_simulation(
        field,
        StepConfig(0.02),
        NullPdo(),
        t_final=0.1,
        dump_every=2,
        dump_dir=str(tmp_path),
    )
    assert result.steps == 5
    assert [m.time for m in result.moments] == pytest.approx([0.0, 0.04, 0.08, 0.1])
    assert result.metrics == []
    assert [os.path.basename(p) for p in result.dumps] == [
        "field_000000.chsm",
        "field_000002.chsm",
        "field_000004.chsm",
        "field_000005.chsm",
    ]
    assert all(os.path.exists(p) for p in result.dumps)
    assert result.moments[-1].mass == pytest.approx(result.moments[0].mass, abs=1e-12)
    assert field.time == 0.0


def test_run_without_steps(make_gaussian):
    field = make_gaussian()
    result = run_simulation(field, StepConfig(0.02), NullPdo(), t_final=0.0)
    assert result.steps == 0
    assert len(result.moments) == 1
    np.testing.assert_array_equal(result.field.values, field.values)


def test_run_stops_on_non_finite_field(make_gaussian):
    def broken(values, out=None):
        if out is None:
            return np.full_like(values, np.inf)
        out[...] = np.inf
        return out

    with pytest.raises(NumericalError, match="step 1"):
        run_simulation(make_gaussian(), StepConfig(0.01), broken, t_final=0.05)


def test_run_rejects_cfl_violation(make_gaussian):
    with pytest.raises(CflError):
        run_simulation(make_gaussian(), StepConfig(0.1), NullPdo(), t_final=0.2)


def test_run_rejects_negative_cadence(make_gaussian):
    with pytest.raises(ValueError):
        run_simulation(make_gaussian(), StepConfig(0.01), NullPdo(), t_final=0.02, dump_every=-1)


def test_count_steps():
    assert count_steps(1.0, 0.01) == 100
    assert count_steps(0.0, 0.01) == 0
    with pytest.raises(ValueError):
        count_steps(0.055, 0.01)
    with pytest.raises(ValueError):
        count_steps(-1.0, 0.01)
    with pytest.raises(ValueError):
        count_steps(1.0, 0.0)
