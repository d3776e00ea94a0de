import math

import pytest
from hypothesis import given, settings, strategies as st

from oxsim import pulse_engine as PE
from oxsim.bench import POR_MEASURE, por_library

HDR = ",".join(PE.HEADER) + "\n"


def lib_of(*rows):
    return PE.parse_pulse_library(HDR + "\n".join(rows) + "\n")


def test_por_set_row():
    p = lib_of("10,Set,20e-9,20e-9,100e-9,20e-9,20e-9,2.5")[10]
    assert p.kind == "Set" and p.amplitude == 2.5
    assert p.segments() == (20e-9, 20e-9, 100e-9, 20e-9, 20e-9)


def test_por_reset_row():
    p = lib_of("20,Reset,20e-9,20e-9,100e-9,20e-9,20e-9,-1.5")[20]
    assert p.kind == "Reset" and p.amplitude == -1.5


def test_width_below_20ns_rejected_with_row_and_segment():
    with pytest.raises(PE.SegmentOutOfBounds) as exc:
        lib_of("0,Measure,20e-9,1e-6,10e-6,1e-6,20e-9,0.1", "10,Set,20e-9,20e-9,10e-9,20e-9,20e-9,2.5")
    assert "row 2" in str(exc.value) and "t_width" in str(exc.value)


def test_segment_above_one_second_rejected():
    with pytest.raises(PE.SegmentOutOfBounds):
        lib_of("80,LogDelay,20e-9,20e-9,1.5,20e-9,20e-9,0.0")


def test_zero_amplitude_delay_is_valid():
    p = lib_of("80,LogDelay,20e-9,20e-9,100e-6,20e-9,20e-9,0.0")[80]
    assert p.amplitude == 0.0 and p.is_delay


def test_duplicate_id():
    with pytest.raises(PE.DuplicateId):
        lib_of("10,Set,20e-9,20e-9,100e-9,20e-9,20e-9,2.5", "10,Set,20e-9,20e-9,100e-9,20e-9,20e-9,2.0")


@pytest.mark.parametrize("row", ["15,Reset,20e-9,20e-9,100e-9,20e-9,20e-9,-1.5",
                                 "85,LinDelay,20e-9,20e-9,100e-9,20e-9,20e-9,0",
                                 "40,Disturb,20e-9,20e-9,100e-9,20e-9,20e-9,0.5"])
def test_kind_id_mismatch(row):
    with pytest.raises(PE.KindIdMismatch):
        lib_of(row)


@pytest.mark.parametrize("text", [
    "id,kind\n10,Set\n",
    HDR + "10,Set,20e-9,20e-9,100e-9,20e-9,2.5\n",
    HDR + "10,Set,20e-9,abc,100e-9,20e-9,20e-9,2.5\n",
    HDR + "x,Set,20e-9,20e-9,100e-9,20e-9,20e-9,2.5\n",
    HDR + "10,Pulse,20e-9,20e-9,100e-9,20e-9,20e-9,2.5\n",
    HDR + "10,Set,20e-9,20e-9,100e-9,20e-9,20e-9,nan\n",
    "",
])
def test_malformed(text):
    with pytest.raises(PE.MalformedRow):
        PE.parse_pulse_library(text)


def test_comments_and_blank_lines():
    lib = PE.parse_pulse_library("# library\n" + HDR + "\n# set pulse\n10,Set,20e-9,20e-9,100e-9,20e-9,20e-9,2.5\n")
    assert list(lib.pulses) == [10]


def test_round_trip_por_library():
    lib = por_library()
    text = PE.serialize_pulse_library(lib)
    again = PE.parse_pulse_library(text)
    assert again.pulses == lib.pulses
    assert PE.serialize_pulse_library(again) == text


seg = st.floats(min_value=20e-9, max_value=1.0, allow_nan=False)
amp = st.floats(min_value=-5.0, max_value=5.0, allow_nan=False)


@st.composite
def pulses(draw):
    kind = draw(st.sampled_from(PE.KINDS))
    lo, hi = PE.KIND_RANGES[kind]
    return PE.PulseSpec(draw(st.integers(lo, hi)), kind, *(draw(seg) for _ in range(5)), draw(amp))


@given(st.lists(pulses(), min_size=1, max_size=8, unique_by=lambda p: p.id))
@settings(max_examples=60, deadline=None)
def test_round_trip_property(ps):
    lib = PE.PulseLibrary()
    for p in ps:
        lib.add(p)
    assert PE.parse_pulse_library(PE.serialize_pulse_library(lib)).pulses == lib.pulses


# ---------------------------------------------------------------- sweeps


def gate_seq(n=30):
    lib = por_library()
    seq = PE.SequenceSpec([0, 10], [0, 20], [PE.SweepSpec(1, "amplitude", 0.8, 0.025, 1.3)], n)
    return seq, lib


def test_sweep_index_zero():
    seq, lib = gate_seq()
    set_p, _ = PE.expand_sweep(seq, lib, 0)
    assert set_p[1].amplitude == 0.8


def test_sweep_index_twenty_hits_stop():
    seq, lib = gate_seq()
    assert PE.expand_sweep(seq, lib, 20)[0][1].amplitude == pytest.approx(1.3, abs=1e-12)
    assert PE.expand_sweep(seq, lib, 29)[0][1].amplitude == 1.3


def test_sweep_leaves_other_pulses_verbatim():
    seq, lib = gate_seq()
    set_p, reset_p = PE.expand_sweep(seq, lib, 5)
    assert set_p[0] == lib[0] and reset_p == [lib[0], lib[20]]


def test_sweep_step_zero_rejected_at_parse():
    with pytest.raises(PE.SweepOutOfBounds):
        PE.parse_sequence("set_phase = 0,10\nreset_phase = 0,20\nsweep = 1:amplitude:0.8:0:1.3\n")


def test_sweep_wrong_direction_rejected():
    with pytest.raises(PE.SweepOutOfBounds):
        PE.SweepSpec(1, "amplitude", 0.8, -0.1, 1.3).validate()


def test_time_sweep_out_of_bounds():
    with pytest.raises(PE.SweepOutOfBounds):
        PE.SweepSpec(1, "t_fall", 20e-9, 10e-9, 2.0).validate()
    with pytest.raises(PE.SweepOutOfBounds):
        PE.SweepSpec(1, "t_fall", 10e-9, 10e-9, 1e-6).validate()


def test_sweep_target_out_of_range():
    lib = por_library()
    seq = PE.SequenceSpec([0, 10], [0, 20], [PE.SweepSpec(7, "amplitude", 0.8, 0.025, 1.3)], 3)
    with pytest.raises(PE.SweepOutOfBounds):
        seq.validate(lib)


def test_cycle_index_bounds():
    seq, lib = gate_seq(3)
    with pytest.raises(ValueError):
        PE.expand_sweep(seq, lib, 3)


@given(st.floats(-2, 2), st.floats(0.001, 0.5), st.integers(1, 40), st.integers(0, 60), st.booleans())
def test_sweep_monotone_and_clamped(start, step, n, k, down):
    stop = start + n * step
    if down:
        step, stop = -step, start - n * step
    sw = PE.SweepSpec(0, "amplitude", start, step, stop)
    a, b = sw.value(k), sw.value(k + 1)
    # value(k+1) lies between value(k) and stop
    assert min(a, stop) - 1e-12 <= b <= max(a, stop) + 1e-12
    lo, hi = sorted((start, stop))
    assert lo - 1e-12 <= b <= hi + 1e-12


def test_parse_sequence_file():
    seq = PE.parse_sequence("# por\nset_phase = 0,10,80,0,81,0\nreset_phase = 0,20,80,0,81,0\n"
                            "sweep = 1:amplitude:0.8:0.025:1.3\ncycles = 25\n")
    assert seq.set_phase == [0, 10, 80, 0, 81, 0] and seq.n_cycles == 25
    assert seq.sweeps == [PE.SweepSpec(1, "amplitude", 0.8, 0.025, 1.3)]
    assert PE.parse_sequence(PE.serialize_sequence(seq)) == seq


@pytest.mark.parametrize("text", ["set_phase = 0,10\n", "set_phase = 0,a\nreset_phase = 0\n",
                                  "set_phase = 0\nreset_phase = 0\nfoo = 1\n",
                                  "set_phase = 0\nreset_phase =\n"])
def test_bad_sequence(text):
    with pytest.raises(PE.MalformedRow):
        PE.parse_sequence(text)


# ---------------------------------------------------------------- rendering


def test_render_single_set_pulse():
    p = por_library()[10]
    w = PE.render_waveform([p])
    assert len(w.breakpoints) == 6
    assert max(w.voltages) == 2.5
    (t2, v2), (t3, v3) = w.breakpoints[2], w.breakpoints[3]
    assert v2 == v3 == 2.5 and t3 - t2 == pytest.approx(100e-9, abs=1e-18)
    assert w.voltages[0] == 0.0 and w.voltages[-1] == 0.0


def test_render_empty():
    assert PE.render_waveform([]).duration == 0.0


def test_render_two_pulses_offset():
    lib = por_library()
    a, b = lib[10], lib[80]
    w = PE.render_waveform([a, b])
    wb = PE.render_waveform([b])
    d1, d2 = a.duration, b.duration
    assert w.duration == pytest.approx(d1 + d2, abs=1e-12)
    for (t, v), (tb, vb) in zip(w.breakpoints[5:], wb.breakpoints):
        assert t == pytest.approx(tb + d1, abs=1e-12) and v == vb


@given(st.lists(pulses(), min_size=1, max_size=12))
@settings(max_examples=60, deadline=None)
def test_render_properties(ps):
    w = PE.render_waveform(ps)
    ts = w.times
    assert all(b > a for a, b in zip(ts[:-1], ts[1:]))
    assert w.voltages[0] == 0.0 and w.voltages[-1] == 0.0
    assert abs(w.duration - math.fsum(s for p in ps for s in p.segments())) <= 1e-12
    assert len(w.markers) == len(ps)


def test_measure_marker_voltage_equals_amplitude():
    lib = por_library()
    ps = [lib[0], lib[10], lib[80], lib[0], lib[81], lib[0]]
    w = PE.render_waveform(ps)
    for (t, label), p in zip(w.markers, ps):
        if p.kind == "Measure":
            assert w.voltage_at(t) == pytest.approx(p.amplitude, abs=1e-12)


def test_substeps_bound_voltage_change():
    w = PE.render_waveform([por_library()[10]])
    v, d = PE.waveform_substeps(w, 0.01)
    assert math.fsum(d) == pytest.approx(w.duration, abs=1e-15)
    assert len(v) == 1 + 250 + 1 + 250 + 1
    assert max(abs(b - a) for a, b in zip(v[:-1], v[1:])) <= 0.01 + 1e-12


def test_marker_offset():
    assert POR_MEASURE.marker_offset == pytest.approx(20e-9 + 1e-6 + 5e-6, abs=1e-18)
