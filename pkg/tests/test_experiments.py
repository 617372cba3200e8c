"""Experiment drivers, aggregation, and report files."""

import csv
import json
import logging

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perfagent import experiments as ex
from perfagent import llm_gateway as gw
from perfagent.llm_gateway import Experiment
from perfagent.manifest import Motif
from perfagent.verify import CorrectnessCategory as Cat

from conftest import load_single, write_bench
from kernels import (
    SYNTAX_ERROR,
    fenced,
    matmul_ijk,
    matmul_ikj,
    matmul_omp_ikj,
    matmul_serial_response,
    sleeper,
)

pytestmark = pytest.mark.usefixtures("toolchain_config")

N = 256


def replay(texts):
    return gw.ReplayProvider(
        [{"request_digest": "", "response_text": t, "latency_s": 0.0} for t in texts]
    )


def matmul_bench(root, openmp=False, **overrides):
    flags = ["-O2", "-fopenmp"] if openmp else ["-O2"]
    write_bench(
        root, "matmul",
        {"main.c": matmul_ijk(N)},
        build={"flags": flags},
        run={"repetitions": 2},
        **overrides,
    )
    return load_single(root, "matmul")


def sleep_bench(root, bench_id="sleepy", ms=120):
    write_bench(
        root, bench_id,
        {"main.c": sleeper(ms)},
        build={"flags": ["-O0"]},
        run={"repetitions": 2},
    )
    return load_single(root, bench_id)


def make_record(bench_id="b1", category=Cat.CORRECT, speedup=2.0, tool="t",
                experiment=Experiment.EX1, variant="ex1/cand", motif=Motif.STENCILS,
                threads=None, labels=()):
    correct = category is Cat.CORRECT
    return ex.AttemptRecord(
        benchmark_id=bench_id,
        motif=motif,
        level=1,
        experiment=experiment,
        tool_id=tool,
        variant_tag=variant,
        category=category,
        speedup=speedup if correct else 1.0,
        na_flag=not correct,
        labels=tuple(labels),
        thread_results=threads,
    )


class TestRecordInvariants:
    def test_na_flag_must_match_category(self):
        with pytest.raises(ex.InvalidRecord):
            ex.AttemptRecord(
                "b", Motif.STENCILS, 1, Experiment.EX1, "t", "v",
                Cat.CORRECT, 2.0, na_flag=True,
            )

    def test_na_speedup_must_be_one(self):
        with pytest.raises(ex.InvalidRecord):
            ex.AttemptRecord(
                "b", Motif.STENCILS, 1, Experiment.EX1, "t", "v",
                Cat.OUTPUT_MISMATCH, 1.3, na_flag=True,
            )

    def test_thread_results_only_for_ex3(self):
        with pytest.raises(ex.InvalidRecord):
            make_record(experiment=Experiment.EX1, threads=((4, 2.0),))

    def test_duplicate_rows_rejected(self):
        row = make_record()
        with pytest.raises(ex.DuplicateRow):
            ex.ResultsTable((row, row))

    def test_round_trip(self):
        row = make_record(
            experiment=Experiment.EX3,
            variant="ex3/cand",
            threads=((4, 2.0), (8, None)),
            labels=[gw.OptimizationLabel(
                gw.OptimizationLabelKind.LOOP_INTERCHANGE, "loop interchange"
            )],
        )
        assert ex.record_from_dict(ex.record_to_dict(row)) == row


class TestEx1:
    def test_empty_selection_is_fatal(self, tmp_path, toolchain_config):
        with pytest.raises(ex.EmptySelection):
            ex.run_ex1([], replay([]), toolchain_config, tmp_path / "w")

    def test_interchange_is_correct_and_faster(self, tmp_path, toolchain_config):
        spec = matmul_bench(tmp_path / "b")
        provider = replay([
            fenced(matmul_ikj(N), prose_before="Applied loop interchange."),
        ])
        table = ex.run_ex1([spec], provider, toolchain_config, tmp_path / "w")

        assert len(table.rows) == 1
        row = table.rows[0]
        assert row.category is Cat.CORRECT
        assert row.speedup > 1.3
        assert not row.na_flag
        assert row.experiment is Experiment.EX1
        assert row.tool_id == "replay"
        assert row.variant_tag == "ex1/cand"
        assert row.thread_results is None
        kinds = {l.label for l in row.labels}
        assert gw.OptimizationLabelKind.LOOP_INTERCHANGE in kinds

    def test_prose_only_is_na(self, tmp_path, toolchain_config):
        spec = sleep_bench(tmp_path / "b")
        table = ex.run_ex1(
            [spec], replay(["Buy a faster computer."]), toolchain_config, tmp_path / "w"
        )
        row = table.rows[0]
        assert row.category is Cat.NO_GENERATED_CODE
        assert row.speedup == 1.0
        assert row.na_flag

    def test_two_benchmarks_two_rows(self, tmp_path, toolchain_config):
        a = sleep_bench(tmp_path / "ba", "alpha")
        b = sleep_bench(tmp_path / "bb", "beta")
        provider = replay([fenced(sleeper(60)), fenced(sleeper(60))])
        table = ex.run_ex1([a, b], provider, toolchain_config, tmp_path / "w")
        assert [r.benchmark_id for r in table.rows] == ["alpha", "beta"]

    def test_bad_candidate_is_compilation_error(self, tmp_path, toolchain_config):
        spec = sleep_bench(tmp_path / "b")
        table = ex.run_ex1(
            [spec], replay([fenced(SYNTAX_ERROR)]), toolchain_config, tmp_path / "w"
        )
        row = table.rows[0]
        assert row.category is Cat.COMPILATION_ERROR
        assert row.na_flag and row.speedup == 1.0

    def test_wrong_output_is_mismatch(self, tmp_path, toolchain_config):
        spec = sleep_bench(tmp_path / "b")
        provider = replay([fenced(sleeper(50, message="result 99"))])
        table = ex.run_ex1([spec], provider, toolchain_config, tmp_path / "w")
        assert table.rows[0].category is Cat.OUTPUT_MISMATCH

    def test_added_function_is_flagged(self, tmp_path, toolchain_config):
        spec = sleep_bench(tmp_path / "b")
        candidate = sleeper(50) + "\nstatic int helper(void) { return 1; }\n"
        table = ex.run_ex1(
            [spec], replay([fenced(candidate)]), toolchain_config, tmp_path / "w"
        )
        assert table.rows[0].category is Cat.FAILED_TO_FOLLOW_INSTRUCTIONS

    def test_broken_baseline_skips_the_row(self, tmp_path, toolchain_config, caplog):
        write_bench(tmp_path / "bb", "broken", {"main.c": SYNTAX_ERROR})
        broken = load_single(tmp_path / "bb", "broken")
        good = sleep_bench(tmp_path / "bg", "good")
        provider = replay([fenced(sleeper(60)), fenced(sleeper(60))])
        with caplog.at_level(logging.ERROR, logger="perfagent.experiments"):
            table = ex.run_ex1(
                [broken, good], provider, toolchain_config, tmp_path / "w"
            )
        assert [r.benchmark_id for r in table.rows] == ["good"]
        assert any("broken" in r.message for r in caplog.records)

    def test_provider_failure_becomes_na_row(self, tmp_path, toolchain_config):
        class DownProvider(gw.Provider):
            provider_id = "down"

            def complete(self, messages):
                raise gw.ProviderUnreachable("no route")

        spec = sleep_bench(tmp_path / "b")
        table = ex.run_ex1([spec], DownProvider(), toolchain_config, tmp_path / "w")
        row = table.rows[0]
        assert row.category is Cat.NO_GENERATED_CODE
        assert row.na_flag

    def test_prompt_carries_instruction_and_source(self, tmp_path, toolchain_config):
        spec = sleep_bench(tmp_path / "b")
        provider = replay(["nothing"])
        ex.run_ex1([spec], provider, toolchain_config, tmp_path / "w")
        messages = provider.received[0]
        assert messages[0]["role"] == "system"
        assert "code generation/optimization assistant" in messages[0]["content"]
        assert messages[1]["content"].startswith("Provide the C/C++ code")
        assert "nanosleep" in messages[1]["content"]

    def test_multi_file_attaches_hotspot_file(self, tmp_path, toolchain_config):
        util = (
            "#include <time.h>\n"
            "void kernel(void) { /* unique_marker_util */\n"
            "    struct timespec ts; ts.tv_sec = 0; ts.tv_nsec = 1000000L;\n"
            "    nanosleep(&ts, 0);\n"
            "}\n"
        )
        main = (
            "#include <stdio.h>\n"
            "void kernel(void);\n"
            "int main(void) { kernel(); printf(\"done\\n\"); return 0; }\n"
        )
        write_bench(
            tmp_path / "b", "duo",
            {"main.c": main, "util.c": util},
            entry_hotspot="kernel",
            run={"repetitions": 2},
        )
        spec = load_single(tmp_path / "b", "duo")
        provider = replay(["nothing"])
        ex.run_ex1([spec], provider, toolchain_config, tmp_path / "w")
        user_text = provider.received[0][1]["content"]
        assert "unique_marker_util" in user_text
        assert "int main" not in user_text


class TestEx2:
    def test_argmax_correct_turn_wins(self, tmp_path, toolchain_config):
        spec = sleep_bench(tmp_path / "b", ms=120)
        provider = replay([
            fenced(sleeper(100)),
            fenced(sleeper(60)),
            "This turn offers no code.",
            fenced(sleeper(80)),
            fenced(sleeper(110)),
        ])
        table = ex.run_ex2([spec], provider, toolchain_config, tmp_path / "w")

        row = table.rows[0]
        assert row.category is Cat.CORRECT
        assert row.variant_tag == "ex2/turn2"
        assert row.experiment is Experiment.EX2
        assert row.speedup > 1.5
        # one shared conversation: history grows by one exchange per answered turn
        assert [len(m) for m in provider.received] == [2, 4, 6, 8, 10]

    def test_all_incorrect_reverts_to_exactly_one(self, tmp_path, toolchain_config):
        spec = sleep_bench(tmp_path / "b")
        provider = replay(["no code here"] * 5)
        table = ex.run_ex2([spec], provider, toolchain_config, tmp_path / "w")
        row = table.rows[0]
        assert row.na_flag
        assert row.speedup == 1.0
        assert row.category is Cat.NO_GENERATED_CODE
        assert row.variant_tag == "ex2/turn5"

    def test_later_turn_recovers_from_bad_first(self, tmp_path, toolchain_config):
        spec = sleep_bench(tmp_path / "b", ms=120)
        provider = replay([
            "cannot help with that",
            fenced(sleeper(60)),
            "done", "done", "done",
        ])
        table = ex.run_ex2([spec], provider, toolchain_config, tmp_path / "w")
        row = table.rows[0]
        assert row.category is Cat.CORRECT
        assert row.variant_tag == "ex2/turn2"

    def test_turn_instructions(self, tmp_path, toolchain_config):
        spec = sleep_bench(tmp_path / "b")
        provider = replay(["a"] * 5)
        ex.run_ex2([spec], provider, toolchain_config, tmp_path / "w")
        first_user = provider.received[0][-1]["content"]
        second_user = provider.received[1][-1]["content"]
        assert first_user.startswith("Provide the C/C++ code")
        assert second_user.startswith("Propose an additional serial optimization")


class TestEx3:
    def test_parallel_sweep_records_counts(self, tmp_path, toolchain_config):
        spec = matmul_bench(tmp_path / "b", openmp=True)
        provider = replay([fenced(matmul_omp_ikj(N))])
        table = ex.run_ex3(
            [spec], provider, toolchain_config, tmp_path / "w", counts=(4, 8)
        )
        row = table.rows[0]
        assert row.category is Cat.CORRECT
        assert row.experiment is Experiment.EX3
        threads = row.thread_map
        assert set(threads) == {4, 8}
        assert threads[8] is not None and threads[8] > 1.0
        assert row.speedup == max(v for v in threads.values() if v is not None)

    def test_serial_answer_fails_instructions(self, tmp_path, toolchain_config):
        spec = matmul_bench(tmp_path / "b", openmp=True)
        provider = replay([fenced(matmul_serial_response(N))])
        table = ex.run_ex3(
            [spec], provider, toolchain_config, tmp_path / "w", counts=(4, 8)
        )
        row = table.rows[0]
        assert row.category is Cat.FAILED_TO_FOLLOW_INSTRUCTIONS
        assert row.na_flag and row.speedup == 1.0
        assert row.thread_results is None

    def test_per_count_crash_recorded_per_count(self, tmp_path, toolchain_config):
        original = (
            "#include <stdio.h>\n"
            "int main(void) { printf(\"fine\\n\"); return 0; }\n"
        )
        candidate = (
            "#include <stdio.h>\n"
            "#include <stdlib.h>\n"
            "#include <string.h>\n"
            "int main(void) {\n"
            "    const char *v = getenv(\"OMP_NUM_THREADS\");\n"
            "#pragma omp parallel\n"
            "    { }\n"
            "    if (v && strcmp(v, \"8\") == 0) return 9;\n"
            "    printf(\"fine\\n\");\n"
            "    return 0;\n"
            "}\n"
        )
        write_bench(
            tmp_path / "b", "picky",
            {"main.c": original},
            build={"flags": ["-O0", "-fopenmp"]},
            run={"repetitions": 2},
        )
        spec = load_single(tmp_path / "b", "picky")
        table = ex.run_ex3(
            [spec], replay([fenced(candidate)]), toolchain_config, tmp_path / "w",
            counts=(4, 8),
        )
        row = table.rows[0]
        assert row.category is Cat.CORRECT
        threads = row.thread_map
        assert threads[4] is not None
        assert threads[8] is None


class TestImport:
    def test_pre_optimized_tree_scores_like_a_variant(self, tmp_path, toolchain_config):
        spec = matmul_bench(tmp_path / "b")
        tree = tmp_path / "ext" / "matmul"
        tree.mkdir(parents=True)
        (tree / "main.c").write_text(matmul_ikj(N))

        table = ex.import_external_tool_results(
            tmp_path / "ext", "srcfix", [spec], toolchain_config, tmp_path / "w"
        )
        row = table.rows[0]
        assert row.tool_id == "srcfix"
        assert row.category is Cat.CORRECT
        assert row.speedup > 1.3
        assert row.variant_tag == "import/srcfix"
        assert row.labels == ()

    def test_empty_dir_empty_table(self, tmp_path, toolchain_config):
        (tmp_path / "ext").mkdir()
        spec = sleep_bench(tmp_path / "b")
        table = ex.import_external_tool_results(
            tmp_path / "ext", "srcfix", [spec], toolchain_config, tmp_path / "w"
        )
        assert table.rows == ()

    def test_broken_tree_is_compilation_error(self, tmp_path, toolchain_config):
        spec = sleep_bench(tmp_path / "b")
        tree = tmp_path / "ext" / "sleepy"
        tree.mkdir(parents=True)
        (tree / "main.c").write_text(SYNTAX_ERROR)
        table = ex.import_external_tool_results(
            tmp_path / "ext", "srcfix", [spec], toolchain_config, tmp_path / "w"
        )
        assert table.rows[0].category is Cat.COMPILATION_ERROR

    def test_unknown_tree_skipped_with_warning(self, tmp_path, toolchain_config, caplog):
        spec = sleep_bench(tmp_path / "b")
        tree = tmp_path / "ext" / "stranger"
        tree.mkdir(parents=True)
        (tree / "main.c").write_text(sleeper(50))
        with caplog.at_level(logging.WARNING, logger="perfagent.experiments"):
            table = ex.import_external_tool_results(
                tmp_path / "ext", "srcfix", [spec], toolchain_config, tmp_path / "w"
            )
        assert table.rows == ()
        assert any("stranger" in r.message for r in caplog.records)


class TestAggregate:
    def test_na_counts_as_one(self):
        table = ex.ResultsTable((
            make_record("b1", speedup=2.0),
            make_record("b2", category=Cat.OUTPUT_MISMATCH),
        ))
        (summary,) = ex.aggregate(table, group_by=("tool",))
        assert summary["tool_id"] == "t"
        assert summary["mean_speedup"] == pytest.approx(1.5)
        assert summary["pass_at_1"] == pytest.approx(0.5)
        assert summary["n"] == 2

    def test_single_row_mean(self):
        table = ex.ResultsTable((make_record(speedup=5.46),))
        (summary,) = ex.aggregate(table)
        assert summary["mean_speedup"] == pytest.approx(5.46)

    def test_eighteen_of_twenty_pass_rate(self):
        rows = tuple(
            make_record(f"b{i}", category=Cat.CORRECT, speedup=1.1)
            for i in range(18)
        ) + tuple(
            make_record(f"b{i}", category=Cat.OUTPUT_MISMATCH) for i in range(18, 20)
        )
        (summary,) = ex.aggregate(ex.ResultsTable(rows))
        assert summary["pass_at_1"] == 0.90
        assert summary["n"] == 20

    def test_all_na_means_one(self):
        table = ex.ResultsTable((
            make_record("b1", category=Cat.COMPILATION_ERROR),
            make_record("b2", category=Cat.NO_GENERATED_CODE),
        ))
        (summary,) = ex.aggregate(table)
        assert summary["mean_speedup"] == 1.0
        assert summary["pass_at_1"] == 0.0

    def test_empty_table_raises(self):
        with pytest.raises(ex.EmptyTable):
            ex.aggregate(ex.ResultsTable(()))

    def test_geometric_mean(self):
        table = ex.ResultsTable((
            make_record("b1", speedup=2.0),
            make_record("b2", speedup=8.0),
        ))
        (summary,) = ex.aggregate(table, mean="geometric")
        assert summary["mean_speedup"] == pytest.approx(4.0)
        assert summary["mean_kind"] == "geometric"

    def test_grouping_splits_and_sorts(self):
        table = ex.ResultsTable((
            make_record("b1", tool="zeta", speedup=2.0),
            make_record("b2", tool="alpha", speedup=4.0),
            make_record("b1", tool="alpha", speedup=3.0, variant="other"),
        ))
        summaries = ex.aggregate(table, group_by=("tool",))
        assert [s["tool_id"] for s in summaries] == ["alpha", "zeta"]
        assert summaries[0]["n"] == 2

    def test_unknown_dimension(self):
        table = ex.ResultsTable((make_record(),))
        with pytest.raises(ValueError):
            ex.aggregate(table, group_by=("vibe",))

    def test_unknown_mean_kind(self):
        table = ex.ResultsTable((make_record(),))
        with pytest.raises(ValueError):
            ex.aggregate(table, mean="harmonic")

    @given(
        speeds=st.lists(
            st.floats(min_value=0.1, max_value=50.0, allow_nan=False),
            min_size=1, max_size=12,
        ),
        na_count=st.integers(min_value=0, max_value=6),
    )
    @settings(max_examples=80, deadline=None)
    def test_mean_stays_within_bounds(self, speeds, na_count):
        rows = tuple(
            make_record(f"c{i}", speedup=s) for i, s in enumerate(speeds)
        ) + tuple(
            make_record(f"n{i}", category=Cat.OUTPUT_MISMATCH) for i in range(na_count)
        )
        (summary,) = ex.aggregate(ex.ResultsTable(rows))
        everything = list(speeds) + [1.0] * na_count
        # summation rounding may land a few ulps outside [min, max]
        slack = 1e-9 * max(everything)
        assert min(everything) - slack <= summary["mean_speedup"]
        assert summary["mean_speedup"] <= max(everything) + slack
        assert summary["pass_at_1"] == pytest.approx(len(speeds) / len(everything))


def small_table():
    rows = (
        make_record(
            "alpha", speedup=2.5,
            labels=[
                gw.OptimizationLabel(gw.OptimizationLabelKind.LOOP_INTERCHANGE, "x"),
                gw.OptimizationLabel(gw.OptimizationLabelKind.LOOP_TILING, "y"),
            ],
        ),
        make_record("beta", category=Cat.OUTPUT_MISMATCH),
        make_record(
            "gamma", experiment=Experiment.EX3, variant="ex3/cand", speedup=3.5,
            threads=((4, 2.0), (8, 3.5)),
        ),
    )
    return ex.ResultsTable(rows, {"tool_id": "t", "toolchain": {"gcc": "gcc 11"},
                                  "timestamp": "2026-08-16T00:00:00+00:00"})


class TestReports:
    def test_csv_shape(self, tmp_path):
        table = small_table()
        written = ex.emit_report(table, [], tmp_path, formats=("csv",))
        text = written["csv"].read_text()
        lines = text.splitlines()
        assert lines[0] == (
            "benchmark_id,motif,level,experiment,tool_id,variant_tag,category,"
            "speedup,na_flag,thread_4,thread_8,thread_16,thread_32,labels"
        )
        assert len(lines) == 1 + len(table.rows)
        parsed = list(csv.DictReader(text.splitlines()))
        assert parsed[0]["labels"] == "LoopInterchange;LoopTiling"
        assert parsed[0]["speedup"] == "2.500000"
        assert parsed[0]["thread_4"] == ""
        assert parsed[1]["na_flag"] == "1"
        assert parsed[1]["speedup"] == "1.000000"
        assert parsed[2]["thread_8"] == "3.500000"
        assert parsed[2]["thread_16"] == ""

    def test_markdown_tables(self, tmp_path):
        table = small_table()
        summaries = ex.aggregate(table, group_by=("tool", "experiment"))
        written = ex.emit_report(table, summaries, tmp_path, formats=("markdown",))
        text = written["markdown"].read_text()
        assert "## Correctness" in text
        assert "| Correct |" in text
        assert "| Total |" in text
        assert "## Mean speedup by motif" in text
        assert "Stencils" in text
        assert "arithmetic" in text

    def test_markdown_counts_sum_to_total(self, tmp_path):
        table = small_table()
        written = ex.emit_report(table, [], tmp_path, formats=("markdown",))
        lines = written["markdown"].read_text().splitlines()
        start = lines.index("## Correctness") + 2
        block = []
        for line in lines[start:]:
            if not line.startswith("|"):
                break
            block.append([c.strip() for c in line.strip("|").split("|")])
        header, _, *body = block
        for col in range(1, len(header)):
            counts = [int(r[col]) for r in body[:-1]]
            assert sum(counts) == int(body[-1][col])

    def test_json_round_trips(self, tmp_path):
        table = small_table()
        written = ex.emit_report(table, [], tmp_path, formats=("json",))
        loaded = ex.load_table(written["json"])
        assert loaded.rows == table.rows
        assert loaded.provenance == table.provenance

    def test_emission_is_deterministic(self, tmp_path):
        table = small_table()
        summaries = ex.aggregate(table)
        a = ex.emit_report(table, summaries, tmp_path / "a")
        b = ex.emit_report(table, summaries, tmp_path / "b")
        for fmt in ("csv", "markdown", "json"):
            assert a[fmt].read_bytes() == b[fmt].read_bytes()

    def test_empty_summaries_render_headers(self, tmp_path):
        written = ex.emit_report(small_table(), [], tmp_path, formats=("markdown",))
        text = written["markdown"].read_text()
        assert "| group | mean_speedup | pass_at_1 | n |" in text

    def test_unwritable_path(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(ex.UnwritablePath):
            ex.emit_report(small_table(), [], blocker / "sub")

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ValueError):
            ex.emit_report(small_table(), [], tmp_path, formats=("pdf",))

    @given(st.data())
    @settings(max_examples=40, deadline=None)
    def test_csv_parses_back(self, tmp_path_factory, data):
        count = data.draw(st.integers(min_value=0, max_value=8))
        rows = []
        for i in range(count):
            category = data.draw(st.sampled_from(list(Cat)))
            speedup = data.draw(st.floats(min_value=0.1, max_value=9.0))
            rows.append(make_record(f"b{i}", category=category, speedup=speedup))
        table = ex.ResultsTable(tuple(rows))
        out = tmp_path_factory.mktemp("csvprop")
        written = ex.emit_report(table, [], out, formats=("csv",))
        parsed = list(csv.DictReader(written["csv"].read_text().splitlines()))
        assert len(parsed) == count
        for got, row in zip(parsed, table.rows):
            assert got["category"] == row.category.value
            assert got["na_flag"] == ("1" if row.na_flag else "0")
