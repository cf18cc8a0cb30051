import pytest

from authcoin.cli import main

SMALL = ["--difficulty", "5"]


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out


def setup_two_users(tmp_path, capsys):
    chain = str(tmp_path / "chain.bin")
    alice = str(tmp_path / "alice.ks")
    bob = str(tmp_path / "bob.ks")
    ids = []
    for seed, email, name, store in (
        (7, "a@b.c", "Alice", alice),
        (8, "b@b.c", "Bob", bob),
    ):
        code, out = run(capsys, "keygen", "--seed", str(seed), "--bits", "128",
                        "--email", email, "--name", name, "--keystore", store)
        assert code == 0
        key_id = out.strip()
        code, out = run(capsys, "register", "--chain", chain, "--keystore", store,
                        "--email", email, "--name", name, *SMALL)
        assert code == 0
        assert out.strip() == key_id  # keygen predicts the registered id
        ids.append(key_id)
    code, _ = run(capsys, "mine", "--chain", chain, "--now", "1", *SMALL)
    assert code == 0
    return chain, alice, bob, ids


def test_keygen_register_mine_lookup(tmp_path, capsys):
    chain, alice, bob, ids = setup_two_users(tmp_path, capsys)
    code, out = run(capsys, "lookup", "--chain", chain, "--email", "a@b.c",
                    "--now", "1", *SMALL)
    assert code == 0
    assert out.splitlines() == [f"{ids[0]} a@b.c valid"]
    # lookup output is byte-identical across invocations
    code, out2 = run(capsys, "lookup", "--chain", chain, "--email", "a@b.c",
                     "--now", "1", *SMALL)
    assert out2 == out


def test_lookup_empty_chain_exits_zero(tmp_path, capsys):
    code, out = run(capsys, "lookup", "--chain", str(tmp_path / "none.bin"),
                    "--email", "a@b.c", *SMALL)
    assert code == 0
    assert out == ""


def test_validate_session_and_status(tmp_path, capsys):
    chain, alice, bob, ids = setup_two_users(tmp_path, capsys)
    code, out = run(capsys, "validate", "--chain", chain, "--keystore", alice,
                    "--peer-keystore", bob, "--seed", "3", "--now", "2",
                    "--min-bits", "128", *SMALL)
    assert code == 0
    assert "forward=success" in out and "backward=success" in out
    code, _ = run(capsys, "mine", "--chain", chain, "--now", "2", *SMALL)
    assert code == 0
    code, out = run(capsys, "status", "--chain", chain, "--key-id", ids[0],
                    "--now", "2", *SMALL)
    assert code == 0
    assert out.strip() == "valid"
    code, out = run(capsys, "history", "--chain", chain, "--key-id", ids[0], *SMALL)
    assert code == 0
    assert "SignatureRecord" in out


def test_authenticate_reject_documents_failure(tmp_path, capsys):
    chain, alice, bob, _ = setup_two_users(tmp_path, capsys)
    code, out = run(capsys, "authenticate", "--chain", chain, "--keystore", alice,
                    "--peer-keystore", bob, "--seed", "3", "--now", "2",
                    "--min-bits", "128", "--verdict", "reject", *SMALL)
    assert code == 0
    assert "forward=failure" in out
    assert "state=failed" in out


def test_revoke_key_flow(tmp_path, capsys):
    chain, alice, _, ids = setup_two_users(tmp_path, capsys)
    code, _ = run(capsys, "revoke-key", "--chain", chain, "--keystore", alice,
                  "--now", "2", *SMALL)
    assert code == 0
    code, _ = run(capsys, "mine", "--chain", chain, "--now", "2", *SMALL)
    assert code == 0
    code, out = run(capsys, "status", "--chain", chain, "--key-id", ids[0],
                    "--now", "3", *SMALL)
    assert out.strip() == "revoked"


def test_chain_verify_detects_tamper(tmp_path, capsys):
    chain, *_ = setup_two_users(tmp_path, capsys)
    code, out = run(capsys, "chain", "verify", "--chain", chain)
    assert code == 0 and out.startswith("ok")
    data = bytearray(open(chain, "rb").read())
    data[-3] ^= 0x40
    open(chain, "wb").write(bytes(data))
    code, out = run(capsys, "chain", "verify", "--chain", chain)
    assert code == 1
    assert "first_bad_height=" in out


def test_var_list_shows_generated_requests(tmp_path, capsys):
    chain, *_ = setup_two_users(tmp_path, capsys)
    code, out = run(capsys, "var", "list", "--chain", chain, "--var-rate", "1.0", *SMALL)
    assert code == 0
    lines = out.splitlines()
    assert len(lines) == 2  # one VAR per registered key at rate 1.0
    assert all(line.endswith("open") for line in lines)


def test_unknown_keystore_is_domain_error(tmp_path, capsys):
    chain, alice, bob, _ = setup_two_users(tmp_path, capsys)
    code, _ = run(capsys, "keygen", "--seed", "99", "--bits", "128", "--email",
                  "x@y.z", "--name", "X", "--keystore", str(tmp_path / "x.ks"))
    assert code == 0
    code, _ = run(capsys, "validate", "--chain", chain,
                  "--keystore", str(tmp_path / "x.ks"), "--peer-keystore", bob,
                  "--seed", "1", "--min-bits", "128", *SMALL)
    assert code == 1  # unregistered key: domain error, not usage error


def test_usage_errors_exit_two(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["no-such-verb"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["lookup"])  # missing required --chain
    assert exc.value.code == 2


def test_sim_run_writes_deterministic_files(tmp_path, capsys):
    config = tmp_path / "scenario.cfg"
    config.write_text(
        "seed=11\nhonest_count=4\nsybil_count=2\nblocks_to_run=6\n"
        "difficulty=5\nmin_bits=128\n"
    )
    paths = []
    for tag in ("a", "b"):
        chain = tmp_path / f"chain-{tag}.bin"
        metrics = tmp_path / f"metrics-{tag}.txt"
        code, out = run(capsys, "sim", "run", "--config", str(config),
                        "--chain", str(chain), "--metrics", str(metrics))
        assert code == 0
        assert "sybils_exposed=" in out
        paths.append((chain.read_bytes(), metrics.read_bytes()))
    assert paths[0] == paths[1]


def test_reach_report_and_cert_monitor(tmp_path, capsys):
    chain, *_ = setup_two_users(tmp_path, capsys)
    code, out = run(capsys, "reach-report", "--chain", chain, "--now", "2", *SMALL)
    assert code == 0
    assert sorted(out.splitlines()) == ["a@b.c unknown", "b@b.c unknown"]

    obs = tmp_path / "obs.txt"
    obs.write_text(
        "eu example.org aa 5\n"
        "us example.org aa 5\n"
        "ap example.org bb 5\n"
    )
    code, out = run(capsys, "cert-monitor", "--observations", str(obs))
    assert code == 0
    assert "example.org mismatch day=5 majority=aa minority=ap" in out
