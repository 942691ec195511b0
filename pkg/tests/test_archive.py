"""Container format tests: round trips, splits, resync, corruption, benchmark."""

import random
import string

import pytest

from vitallake.archive import (
    ContainerCorruptError,
    ContainerSchema,
    ContainerTruncatedError,
    FieldPredicate,
    NotAContainerError,
    QueryError,
    SchemaError,
    SchemaField,
    benchmark_formats,
    container_info,
    csv_read,
    csv_write,
    iter_blocks,
    read_container,
    read_from_sync,
    scan,
    split_points,
    sync_positions,
    write_container,
)

SIG = ContainerSchema(
    name="signal",
    fields=(
        SchemaField("ts", "int64"),
        SchemaField("source", "text"),
        SchemaField("unit", "text"),
        SchemaField("channel", "text"),
        SchemaField("value_text", "text"),
        SchemaField("value_num", "float64", optional=True),
        SchemaField("value_unit", "text", optional=True),
        SchemaField("is_alarm", "bool"),
        SchemaField("msg_control_id", "text"),
    ),
)


def make_signals(n, seed=7):
    rng = random.Random(seed)
    channels = ["HR", "SpO2", "RR", "TEMP"]
    out = []
    for i in range(n):
        ch = rng.choice(channels)
        num = round(rng.uniform(40, 180), 1)
        out.append({
            "ts": 1488326400000 + i * 1000,
            "source": f"B{rng.randrange(4):02d}",
            "unit": rng.choice(["MICU", "PICU"]),
            "channel": ch,
            "value_text": str(num),
            "value_num": num if rng.random() > 0.1 else None,
            "value_unit": "bpm" if rng.random() > 0.2 else None,
            "is_alarm": rng.random() < 0.05,
            "msg_control_id": f"SIM-{i:07d}",
        })
    return out


def random_schema(rng):
    types = ["int64", "float64", "text", "bool", "bytes"]
    n = rng.randrange(1, 7)
    fields = tuple(
        SchemaField(f"f{i}", rng.choice(types), optional=rng.random() < 0.4)
        for i in range(n)
    )
    return ContainerSchema(name=f"rand{n}", fields=fields)


def random_record(schema, rng):
    rec = {}
    for f in schema.fields:
        if f.optional and rng.random() < 0.3:
            rec[f.name] = None
            continue
        if f.type == "int64":
            rec[f.name] = rng.randrange(-(2**40), 2**40)
        elif f.type == "float64":
            rec[f.name] = rng.uniform(-1e6, 1e6)
        elif f.type == "text":
            rec[f.name] = "".join(rng.choice(string.printable) for _ in range(rng.randrange(0, 24)))
        elif f.type == "bool":
            rec[f.name] = rng.random() < 0.5
        else:
            rec[f.name] = rng.randbytes(rng.randrange(0, 32))
    return rec


class TestRoundTrip:
    def test_empty_container(self, tmp_path):
        p = tmp_path / "empty.ctr"
        assert write_container([], SIG, p) == 0
        assert read_container(p) == []
        assert split_points(p) == []

    def test_block_arithmetic_10001(self, tmp_path):
        p = tmp_path / "b.ctr"
        records = make_signals(10_001)
        write_container(records, SIG, p, target_block_records=5000)
        counts = [len(r) for _, r in iter_blocks(p)]
        assert counts == [5000, 5000, 1]

    def test_signal_fixture_roundtrip(self, tmp_path):
        p = tmp_path / "s.ctr"
        records = make_signals(2500)
        write_container(records, SIG, p, target_block_records=1000)
        assert read_container(p) == records

    def test_property_random_schemas_codecs_sizes(self, tmp_path):
        rng = random.Random(20170301)
        for case in range(60):
            schema = random_schema(rng)
            records = [random_record(schema, rng) for _ in range(rng.randrange(0, 400))]
            codec = rng.choice(["none", "lz-block"])
            block = rng.choice([1, 7, 100, 5000])
            p = tmp_path / f"case{case}.ctr"
            write_container(records, schema, p, codec=codec, target_block_records=block)
            assert read_container(p) == records, f"case {case} failed"

    def test_codec_transparency(self, tmp_path):
        records = make_signals(800)
        a, b = tmp_path / "a.ctr", tmp_path / "b.ctr"
        write_container(records, SIG, a, codec="none")
        write_container(records, SIG, b, codec="lz-block")
        assert read_container(a) == read_container(b)


class TestSchemaValidation:
    def test_violation_names_record_and_field(self, tmp_path):
        bad = make_signals(3)
        bad[2]["ts"] = "not-an-int"
        with pytest.raises(SchemaError) as e:
            write_container(bad, SIG, tmp_path / "x.ctr")
        assert e.value.record_index == 2
        assert e.value.field == "ts"

    def test_missing_required_field(self, tmp_path):
        bad = make_signals(2)
        del bad[1]["channel"]
        with pytest.raises(SchemaError) as e:
            write_container(bad, SIG, tmp_path / "x.ctr")
        assert e.value.record_index == 1 and e.value.field == "channel"

    def test_duplicate_field_names_rejected(self):
        with pytest.raises(SchemaError):
            ContainerSchema("dup", (SchemaField("a", "int64"), SchemaField("a", "text")))

    def test_bool_is_not_int(self, tmp_path):
        bad = [{**make_signals(1)[0], "ts": True}]
        with pytest.raises(SchemaError):
            write_container(bad, SIG, tmp_path / "x.ctr")


class TestCorruption:
    def test_bad_magic(self, tmp_path):
        p = tmp_path / "no.ctr"
        p.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(NotAContainerError):
            read_container(p)

    def test_payload_bitflip_names_block_earlier_blocks_readable(self, tmp_path):
        p = tmp_path / "c.ctr"
        records = make_signals(3000)
        write_container(records, SIG, p, target_block_records=1000)
        points = split_points(p)
        # flip one byte inside block 1's payload (skip its 16B header)
        start = points[1][1][0]
        data = bytearray(p.read_bytes())
        data[start + 20] ^= 0xFF
        p.write_bytes(bytes(data))
        with pytest.raises(ContainerCorruptError) as e:
            read_container(p)
        assert e.value.block_index == 1
        # earlier block still readable via its split range
        good = scan(p, ranges=[points[0]])
        assert good == records[:1000]

    def test_truncated_final_block(self, tmp_path):
        p = tmp_path / "t.ctr"
        write_container(make_signals(3000), SIG, p, target_block_records=1000)
        data = p.read_bytes()
        p.write_bytes(data[:-9])
        with pytest.raises(ContainerTruncatedError) as e:
            read_container(p)
        assert e.value.last_good_block == 1


class TestSplitAndResync:
    def test_three_blocks_three_ranges(self, tmp_path):
        p = tmp_path / "r.ctr"
        write_container(make_signals(3000), SIG, p, target_block_records=1000)
        points = split_points(p)
        assert [b for b, _ in points] == [0, 1, 2]
        # ranges tile the file exactly from first block to EOF
        first_start = points[0][1][0]
        assert first_start == container_info(p).first_block_at
        for (_, (s1, e1)), (_, (s2, _)) in zip(points, points[1:]):
            assert e1 == s2
        assert points[-1][1][1] == p.stat().st_size

    def test_single_block_single_range(self, tmp_path):
        p = tmp_path / "one.ctr"
        write_container(make_signals(10), SIG, p)
        assert len(split_points(p)) == 1

    def test_parallel_scan_equals_sequential(self, tmp_path):
        from concurrent.futures import ThreadPoolExecutor

        p = tmp_path / "p.ctr"
        records = make_signals(5000)
        write_container(records, SIG, p, target_block_records=700)
        sequential = read_container(p)
        points = split_points(p)
        with ThreadPoolExecutor(max_workers=4) as pool:
            chunks = list(pool.map(lambda pt: scan(p, ranges=[pt]), points))
        merged = [r for chunk in chunks for r in chunk]
        key = lambda r: (r["ts"], r["msg_control_id"], r["channel"])
        assert sorted(merged, key=key) == sorted(sequential, key=key)
        assert len(merged) == len(records)

    def test_resync_from_every_marker(self, tmp_path):
        p = tmp_path / "sync.ctr"
        records = make_signals(2500)
        write_container(records, SIG, p, target_block_records=1000)
        positions = sync_positions(p)
        assert len(positions) == 4  # header + 3 blocks
        remaining = [2500, 1500, 500, 0]
        for pos, n in zip(positions, remaining):
            got = read_from_sync(p, pos)
            assert len(got) == n
            assert got == records[2500 - n :]


class TestScan:
    def test_predicate_equals_bruteforce(self, tmp_path):
        p = tmp_path / "q.ctr"
        records = make_signals(4000)
        write_container(records, SIG, p)
        got = scan(p, where=FieldPredicate.where(equals={"channel": "HR"}))
        assert got == [r for r in records if r["channel"] == "HR"]

    def test_interval_predicate(self, tmp_path):
        p = tmp_path / "q2.ctr"
        records = make_signals(1000)
        write_container(records, SIG, p)
        t0 = records[100]["ts"]
        t1 = records[200]["ts"]
        got = scan(p, where=FieldPredicate.where(intervals={"ts": (t0, t1)}))
        assert got == [r for r in records if t0 <= r["ts"] <= t1]

    def test_always_true_and_false(self, tmp_path):
        p = tmp_path / "q3.ctr"
        records = make_signals(300)
        write_container(records, SIG, p)
        assert scan(p) == records
        assert scan(p, where=FieldPredicate.where(equals={"channel": "NOPE"})) == []

    def test_unknown_field_is_query_error(self, tmp_path):
        p = tmp_path / "q4.ctr"
        write_container(make_signals(5), SIG, p)
        with pytest.raises(QueryError):
            scan(p, where=FieldPredicate.where(equals={"nope": 1}))
        with pytest.raises(QueryError):
            scan(p, select=["nope"])

    def test_projection(self, tmp_path):
        p = tmp_path / "q5.ctr"
        records = make_signals(50)
        write_container(records, SIG, p)
        got = scan(p, select=["channel", "ts"])
        assert got == [{"channel": r["channel"], "ts": r["ts"]} for r in records]


class TestCsvAndBenchmark:
    def test_csv_roundtrip(self, tmp_path):
        records = make_signals(500)
        p = tmp_path / "c.csv"
        csv_write(records, SIG, p)
        assert csv_read(p, SIG) == records

    def test_benchmark_sizes_and_equality(self, tmp_path):
        records = make_signals(6000)
        report = benchmark_formats(records, SIG, tmp_path, repetitions=3,
                                   target_block_records=2000)
        sizes = {k: v.size_bytes for k, v in report.cells.items()}
        assert sizes["container+lz"] < sizes["csv"]
        assert sizes["container+lz"] < sizes["container"]
        assert report.repetitions == 3
        table = report.to_table()
        assert "csv" in table and "container+lz" in table
        assert '"formats"' in report.to_json()

    def test_benchmark_rejects_empty(self, tmp_path):
        with pytest.raises(ValueError):
            benchmark_formats([], SIG, tmp_path)
