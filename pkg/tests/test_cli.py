import csv
import random
import subprocess
import time

import pytest
from helpers import CLI, served, run_cli

from ppknn import oracle
from ppknn.cli import main, read_dataset
from ppknn.paillier import load_public_key, load_secret_key
from ppknn.pipeline import attribute_bits, load_database

L = 12
M = 2


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["keygen", "--bits", "512", "--insecure", "--seed", "7", "--out", str(d / "keys")]) == 0
    rng = random.Random(2)
    bits = attribute_bits(L, M)
    rows = [[rng.randrange(1 << bits) for _ in range(M)] + [rng.randrange(3)] for _ in range(10)]
    with open(d / "data.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["a", "b", "label"])
        writer.writerows(rows)
    args = ["encrypt-db", "--pub", d / "keys/ppknn.pub", "--csv", d / "data.csv", "--out", d / "d.ppknn"]
    assert main([*map(str, args), "--classes", "3", "--l", str(L)]) == 0
    return d, rows


def records(rows):
    return [(r[:-1], r[-1]) for r in rows]


class TestKeygen:
    def test_writes_loadable_pair(self, tmp_path, capsys):
        assert main(["keygen", "--bits", "2048", "--out", str(tmp_path / "k")]) == 0
        pk = load_public_key(tmp_path / "k/ppknn.pub")
        sk = load_secret_key(tmp_path / "k/ppknn.key")
        assert pk.bit_length == 2048 and sk.public_key == pk
        assert "2048-bit" in capsys.readouterr().out

    def test_small_key_needs_flag(self, tmp_path, capsys):
        assert main(["keygen", "--bits", "512", "--out", str(tmp_path)]) == 2
        assert "--insecure" in capsys.readouterr().err
        assert not (tmp_path / "ppknn.pub").exists()

    def test_floor_even_with_flag(self, tmp_path):
        assert main(["keygen", "--bits", "128", "--insecure", "--out", str(tmp_path)]) == 2

    def test_insecure_accepted(self, tmp_path):
        assert main(["keygen", "--bits", "512", "--insecure", "--out", str(tmp_path)]) == 0
        assert load_public_key(tmp_path / "ppknn.pub").bit_length == 512


class TestEncryptDb:
    def test_thirty_rows(self, workdir, tmp_path, capsys):
        d, _ = workdir
        rng = random.Random(0)
        (tmp_path / "t.csv").write_text(
            "".join(f"{rng.randrange(32)},{rng.randrange(32)},{rng.randrange(2)}\n" for _ in range(30))
        )
        out = tmp_path / "t.ppknn"
        args = ["encrypt-db", "--pub", str(d / "keys/ppknn.pub"), "--csv", str(tmp_path / "t.csv"), "--out", str(out)]
        assert main([*args, "-w", "2", "--l", str(L)]) == 0
        assert out.read_text().startswith("ppknn-db v1; n=30; m=2; w=2; l=12")
        assert load_database(out).n == 30

    def test_bad_cell_names_line(self, workdir, tmp_path, capsys):
        d, _ = workdir
        (tmp_path / "bad.csv").write_text("a,b,label\n1,2,0\n3,4,1\n5,6,0\n7,x,1\n")
        out = tmp_path / "o.ppknn"
        args = ["encrypt-db", "--pub", str(d / "keys/ppknn.pub"), "--csv", str(tmp_path / "bad.csv"), "--out", str(out)]
        assert main([*args, "-w", "2"]) == 2
        assert "line 5" in capsys.readouterr().err
        assert not out.exists()

    def test_empty_csv(self, workdir, tmp_path):
        d, _ = workdir
        (tmp_path / "e.csv").write_text("")
        out = tmp_path / "e.ppknn"
        args = ["encrypt-db", "--pub", str(d / "keys/ppknn.pub"), "--csv", str(tmp_path / "e.csv"), "--out", str(out)]
        assert main([*args, "-w", "2"]) == 0
        assert "n=0" in out.read_text().splitlines()[0]

    def test_ragged_rows(self, tmp_path):
        (tmp_path / "r.csv").write_text("1,2,0\n1,0\n")
        with pytest.raises(Exception, match="line 2"):
            read_dataset(tmp_path / "r.csv")


class TestServeAndQuery:
    def test_end_to_end(self, workdir):
        d, rows = workdir
        pub = d / "keys/ppknn.pub"
        with served(d / "keys/ppknn.key", pub, d / "d.ppknn") as (port, _, _):
            q = rows[3][:-1]
            res = run_cli("query", "--connect", f"127.0.0.1:{port}", "--pub", pub, "--k", 1, ",".join(map(str, q)))
            assert res.returncode == 0, res.stderr
            assert int(res.stdout) in oracle.achievable_labels(records(rows), q, 1)

            q = [5, 17]
            for extra in ([], ["--fast"]):
                res = run_cli("query", "--connect", f"127.0.0.1:{port}", "--pub", pub, "--k", 3, *extra, "5,17")
                assert res.returncode == 0, res.stderr
                assert int(res.stdout) in oracle.achievable_labels(records(rows), q, 3)

            res = run_cli("query", "--connect", f"127.0.0.1:{port}", "--pub", pub, "--k", 0, "5,17")
            assert res.returncode == 2 and "k-out-of-range" in res.stderr
            res = run_cli("query", "--connect", f"127.0.0.1:{port}", "--pub", pub, "--k", 11, "5,17")
            assert res.returncode == 1 and "k-out-of-range" in res.stderr
            res = run_cli("query", "--connect", f"127.0.0.1:{port}", "--pub", pub, "--k", 1, "5,17,2")
            assert res.returncode == 1 and "dimension-error" in res.stderr
            # the service keeps running after rejected queries
            res = run_cli("query", "--connect", f"127.0.0.1:{port}", "--pub", pub, "--k", 1, "5,17")
            assert res.returncode == 0

    def test_mismatched_keys_refused_at_startup(self, workdir, tmp_path):
        d, _ = workdir
        assert main(["keygen", "--bits", "512", "--insecure", "--seed", "8", "--out", str(tmp_path)]) == 0
        with pytest.raises(RuntimeError, match="key-mismatch"):
            with served(tmp_path / "ppknn.key", d / "keys/ppknn.pub", d / "d.ppknn"):
                pass

    def test_user_with_other_key_rejected(self, workdir, tmp_path):
        d, _ = workdir
        main(["keygen", "--bits", "512", "--insecure", "--seed", "9", "--out", str(tmp_path)])
        with served(d / "keys/ppknn.key", d / "keys/ppknn.pub", d / "d.ppknn") as (port, _, _):
            res = run_cli("query", "--connect", f"127.0.0.1:{port}", "--pub", tmp_path / "ppknn.pub", "--k", 1, "1,1")
            assert res.returncode == 1 and "key-mismatch" in res.stderr

    def test_p2_killed_mid_session(self, workdir):
        d, _ = workdir
        pub = d / "keys/ppknn.pub"
        with served(d / "keys/ppknn.key", pub, d / "d.ppknn") as (port, p1, p2):
            user = subprocess.Popen(
                [*CLI, "query", "--connect", f"127.0.0.1:{port}", "--pub", str(pub), "--k", "10", "1,1"],
                stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
            )
            time.sleep(1.0)
            p2.kill()
            _, err = user.communicate(timeout=60)
            assert user.returncode == 1
            assert "transport-disconnected" in err
            assert p1.wait(timeout=30) == 1


class TestVerifyAndBench:
    def test_verify_passes(self, capsys):
        assert main(["verify", "--trials", "4", "--seed", "1"]) == 0
        out = capsys.readouterr().out
        assert out.count("PASS") == 7 and "FAIL" not in out

    def test_verify_catches_literal_sm(self, capsys):
        assert main(["verify", "--trials", "4", "--seed", "1", "--inject-fault", "literal-sm"]) == 1
        assert "FAIL SM: 0/4" in capsys.readouterr().out

    def test_bench_rows(self, capsys):
        assert main(["bench", "--n", "4", "--m", "2", "--l", "12", "--k", "1"]) == 0
        lines = [x for x in capsys.readouterr().out.splitlines() if not x.startswith("#")]
        assert lines[0].split("\t") == ["protocol", "n", "m", "l", "k", "millis", "sm_calls"]
        rows = {r.split("\t")[0]: r.split("\t") for r in lines[1:]}
        assert set(rows) == {"sm", "ssed", "sbd", "smin", "smin_n", "classify"}
        assert rows["ssed"][-1] == "2" and rows["smin"][-1] == str(4 * 12)
