"""Command-line surface.

All state lives in explicit files: ``--chain FILE`` for the chain and a
sidecar ``FILE.pending`` holding records queued for the next ``mine``.
Every seed and timestamp is an explicit flag, so identical invocations
produce byte-identical output.

Exit codes: 0 success, 1 domain error (e.g. a key that may not fulfil a
VAR), 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import random
import struct
import sys

from . import chain as chainmod
from . import records as rec
from .crypto import get_provider, load_keystore, save_keystore
from .errors import AuthcoinError, CorruptFile, UnknownKey
from .keylife import (
    LookupQuery,
    history,
    key_status,
    lookup_key,
    revoke_key,
    revoke_signature,
)
from .protocol import ChallengeSpec, evaluate, fulfil_challenge, issue_challenge, post_session_records, start_session
from .sim import CertObservation, monitor_certificates, parse_config, reachability_report, run_scenario
from .var import SelectionParams, fulfil_var, generate_vars, var_status

PENDING_MAGIC = b"APND"


# -- pending sidecar ----------------------------------------------------

def _pending_path(chain_path: str) -> str:
    return chain_path + ".pending"


def read_pending(chain_path: str) -> list[rec.Record]:
    path = _pending_path(chain_path)
    if not os.path.exists(path):
        return []
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != PENDING_MAGIC:
        raise CorruptFile(0, "bad pending file magic")
    (count,) = struct.unpack_from(">I", data, 4)
    offset = 8
    out = []
    for _ in range(count):
        (length,) = struct.unpack_from(">I", data, offset)
        offset += 4
        out.append(rec.deserialize(data[offset : offset + length]))
        offset += length
    return out


def write_pending(chain_path: str, records_: list[rec.Record]) -> None:
    parts = [PENDING_MAGIC, struct.pack(">I", len(records_))]
    for record in records_:
        blob = rec.canonical_serialize(record)
        parts.append(struct.pack(">I", len(blob)))
        parts.append(blob)
    with open(_pending_path(chain_path), "wb") as fh:
        fh.write(b"".join(parts))


def queue_records(chain_path: str, records_: list[rec.Record]) -> None:
    write_pending(chain_path, read_pending(chain_path) + records_)


def clear_pending(chain_path: str) -> None:
    path = _pending_path(chain_path)
    if os.path.exists(path):
        os.remove(path)


# -- helpers ------------------------------------------------------------

def load_or_init_chain(path: str, difficulty: int) -> chainmod.Chain:
    if os.path.exists(path):
        return chainmod.load(path)
    return chainmod.Chain.genesis(difficulty, timestamp=0)


def build_key_record(key, email: str, name: str, now: int, lifetime: int) -> rec.PublicKeyRecord:
    owner = rec.EntityDescriptor(display_name=name, identifier=email, identifier_kind="email")
    return rec.seal(
        rec.PublicKeyRecord(
            key_id=b"\x00" * 32,
            owner=owner,
            public_bytes=key.public_bytes,
            key_length_bits=key.key_length_bits,
            created_at=now,
            expires_at=now + lifetime,
        )
    )


def find_key_id(chain: chainmod.Chain, key) -> bytes:
    """Locate the on-chain registration of a keystore's key pair."""
    for key_id, (record, _) in chain.key_records.items():
        if record.public_bytes == key.public_bytes:
            return key_id
    raise UnknownKey("this key pair is not registered on the chain")


def tip_vars(chain: chainmod.Chain, params: SelectionParams) -> list[rec.VARecord]:
    """VARs the node owes the next block, regenerated deterministically
    from the tip so no extra state file is needed."""
    if chain.height == 0:
        return []
    return [
        v for v in generate_vars(chain, chain.tip, params) if v.var_id not in chain.var_records
    ]


def run_both_directions(session, initiator_keys, responder_keys, provider, rng, now, verdict):
    """Drive a full bidirectional session locally (both key pairs in hand)."""
    outcomes = {}
    for direction in ("forward", "backward"):
        challenge = issue_challenge(session, direction, rng, now)
        target_keys = responder_keys if direction == "forward" else initiator_keys
        verifier_keys = initiator_keys if direction == "forward" else responder_keys
        response = fulfil_challenge(
            target_keys,
            challenge,
            "correct",
            provider=provider,
            opaque_secret=session.opaque_secret,
            now=now,
        )
        result, _ = evaluate(
            session, direction, response, now, verifier_keys=verifier_keys, verdict=verdict
        )
        outcomes[direction] = result.outcome
        if session.state == "failed":
            break
    return outcomes


def _selection(args) -> SelectionParams:
    return SelectionParams(args.prefix_bits, args.prefix_pattern, args.var_rate)


# -- command implementations --------------------------------------------

def cmd_keygen(args):
    provider = get_provider(args.scheme)
    key = provider.generate_keypair(args.seed, args.bits)
    save_keystore(args.keystore, key)
    record = build_key_record(key, args.email, args.name, args.now, args.lifetime)
    print(record.key_id.hex())
    return 0


def cmd_register(args):
    chain = load_or_init_chain(args.chain, args.difficulty)
    key = load_keystore(args.keystore)
    record = build_key_record(key, args.email, args.name, args.now, args.lifetime)
    queue_records(args.chain, [record])
    print(record.key_id.hex())
    return 0


def cmd_mine(args):
    chain = load_or_init_chain(args.chain, args.difficulty)
    provider = get_provider(args.scheme)
    batch = tip_vars(chain, _selection(args)) + read_pending(args.chain)
    if not batch:
        print("nothing to mine")
        return 0
    block = chainmod.mine_block(chain, batch, args.now, provider)
    chain._append_unchecked(block)
    chainmod.persist(chain, args.chain)
    clear_pending(args.chain)
    print(f"height={block.height} hash={block.block_hash.hex()}")
    return 0


def _cmd_session(args, kind: str):
    chain = load_or_init_chain(args.chain, args.difficulty)
    provider = get_provider(args.scheme)
    initiator_keys = load_keystore(args.keystore)
    responder_keys = load_keystore(args.peer_keystore)
    rng = random.Random(args.seed)
    session = start_session(
        chain,
        find_key_id(chain, initiator_keys),
        find_key_id(chain, responder_keys),
        ChallengeSpec(kind=kind, visibility=args.visibility),
        args.now,
        provider=provider,
        rng=rng,
        min_bits=args.min_bits,
    )
    verdict = args.verdict if kind == "authentication" else None
    outcomes = run_both_directions(
        session, initiator_keys, responder_keys, provider, rng, args.now, verdict
    )
    queue_records(
        args.chain,
        post_session_records(session, "initiator") + post_session_records(session, "responder"),
    )
    print(f"session={session.session_id.hex()}")
    for direction in ("forward", "backward"):
        print(f"{direction}={outcomes.get(direction, 'skipped')}")
    print(f"state={session.state}")
    return 0


def cmd_validate(args):
    return _cmd_session(args, "validation")


def cmd_authenticate(args):
    return _cmd_session(args, "authentication")


def cmd_revoke_key(args):
    chain = load_or_init_chain(args.chain, args.difficulty)
    provider = get_provider(args.scheme)
    key = load_keystore(args.keystore)
    record = revoke_key(chain, find_key_id(chain, key), key, args.now, provider)
    queue_records(args.chain, [record])
    print(record.revocation_id.hex())
    return 0


def cmd_revoke_sig(args):
    chain = load_or_init_chain(args.chain, args.difficulty)
    provider = get_provider(args.scheme)
    key = load_keystore(args.keystore)
    record = revoke_signature(
        chain,
        bytes.fromhex(args.signature_id),
        find_key_id(chain, key),
        key,
        args.now,
        provider,
    )
    queue_records(args.chain, [record])
    print(record.revocation_id.hex())
    return 0


def cmd_lookup(args):
    chain = load_or_init_chain(args.chain, args.difficulty)
    query = LookupQuery(
        email=args.email,
        name=args.name,
        key_id=bytes.fromhex(args.key_id) if args.key_id else None,
    )
    for record, status in lookup_key(chain, query, args.now):
        print(f"{record.key_id.hex()} {record.owner.identifier} {status}")
    return 0


def cmd_history(args):
    chain = load_or_init_chain(args.chain, args.difficulty)
    for record, height in history(chain, bytes.fromhex(args.key_id)):
        print(f"{height} {type(record).__name__} {rec.get_id(record).hex()}")
    return 0


def cmd_status(args):
    chain = load_or_init_chain(args.chain, args.difficulty)
    print(key_status(chain, bytes.fromhex(args.key_id), args.now))
    return 0


def cmd_chain_verify(args):
    try:
        chain = chainmod.load(args.chain)
    except CorruptFile as exc:
        print(f"invalid first_bad_height={exc.first_bad_height}")
        return 1
    print(f"ok height={chain.height}")
    return 0


def cmd_var_list(args):
    chain = load_or_init_chain(args.chain, args.difficulty)
    for var, _ in sorted(chain.var_records.values(), key=lambda e: (e[1], e[0].var_id)):
        print(f"{var.var_id.hex()} {var.kind} {var.target_key_id.hex()} {var_status(chain, var)}")
    for var in tip_vars(chain, _selection(args)):
        print(f"{var.var_id.hex()} {var.kind} {var.target_key_id.hex()} open")
    return 0


def cmd_var_fulfil(args):
    chain = load_or_init_chain(args.chain, args.difficulty)
    provider = get_provider(args.scheme)
    verifier_keys = load_keystore(args.keystore)
    target_keys = load_keystore(args.peer_keystore)
    var_id = bytes.fromhex(args.var_id)
    entry = chain.var_records.get(var_id)
    var = entry[0] if entry else None
    if var is None:
        for candidate in tip_vars(chain, _selection(args)):
            if candidate.var_id == var_id:
                var = candidate
                break
    if var is None:
        raise UnknownKey(f"no VAR {args.var_id}")
    rng = random.Random(args.seed)
    session = fulfil_var(
        var,
        find_key_id(chain, verifier_keys),
        chain,
        _selection(args),
        args.now,
        provider=provider,
        rng=rng,
        min_bits=args.min_bits,
    )
    verdict = "accept" if session.kind == "authentication" else None
    outcomes = run_both_directions(
        session, verifier_keys, target_keys, provider, rng, args.now, verdict
    )
    queue_records(
        args.chain,
        post_session_records(session, "initiator") + post_session_records(session, "responder"),
    )
    print(f"session={session.session_id.hex()}")
    for direction in ("forward", "backward"):
        print(f"{direction}={outcomes.get(direction, 'skipped')}")
    return 0


def cmd_sim_run(args):
    with open(args.config) as fh:
        config = parse_config(fh.read())
    metrics, chain = run_scenario(config)
    chainmod.persist(chain, args.chain)
    text = metrics.to_lines()
    if args.metrics:
        with open(args.metrics, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return 0


def cmd_reach_report(args):
    chain = load_or_init_chain(args.chain, args.difficulty)
    for identifier, status in sorted(reachability_report(chain, args.now).items()):
        print(f"{identifier} {status}")
    return 0


def cmd_cert_monitor(args):
    observations = []
    with open(args.observations) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise AuthcoinError(
                    f"line {lineno}: expected 'vantage identifier key_hex day'"
                )
            observations.append(
                CertObservation(parts[0], parts[1], bytes.fromhex(parts[2]), int(parts[3]))
            )
    for identifier, report in monitor_certificates(observations).items():
        if not report.mismatch:
            print(f"{identifier} ok")
        else:
            for day, majority, minority in report.windows:
                print(
                    f"{identifier} mismatch day={day} "
                    f"majority={majority.hex()} minority={','.join(minority)}"
                )
    return 0


# -- argument wiring ----------------------------------------------------

def _add_common(p, *, chain=True):
    if chain:
        p.add_argument("--chain", required=True, help="chain file")
        p.add_argument("--difficulty", type=int, default=chainmod.DEFAULT_DIFFICULTY)
    p.add_argument("--now", type=int, default=0, help="logical day")
    p.add_argument("--scheme", choices=("toy-deterministic", "standard"), default="toy-deterministic")


def _add_selection(p):
    p.add_argument("--prefix-bits", type=int, default=1)
    p.add_argument("--prefix-pattern", type=int, default=0)
    p.add_argument("--var-rate", type=float, default=0.05)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="authcoin")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("keygen", help="generate a key pair into a keystore file")
    _add_common(p, chain=False)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--bits", type=int, default=2048)
    p.add_argument("--email", required=True)
    p.add_argument("--name", required=True)
    p.add_argument("--keystore", required=True)
    p.add_argument("--lifetime", type=int, default=rec.MAX_LIFETIME_DAYS)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("register", help="queue a key registration record")
    _add_common(p)
    p.add_argument("--keystore", required=True)
    p.add_argument("--email", required=True)
    p.add_argument("--name", required=True)
    p.add_argument("--lifetime", type=int, default=rec.MAX_LIFETIME_DAYS)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("mine", help="mine queued records into a new block")
    _add_common(p)
    _add_selection(p)
    p.set_defaults(func=cmd_mine)

    for verb, func in (("validate", cmd_validate), ("authenticate", cmd_authenticate)):
        p = sub.add_parser(verb, help=f"run a bidirectional {verb.rstrip('e')}ion session")
        _add_common(p)
        p.add_argument("--keystore", required=True, help="initiator key pair")
        p.add_argument("--peer-keystore", required=True, help="responder key pair")
        p.add_argument("--seed", type=int, required=True)
        p.add_argument("--min-bits", type=int, default=2048)
        p.add_argument("--visibility", choices=("open", "opaque"), default="open")
        if verb == "authenticate":
            p.add_argument("--verdict", choices=("accept", "reject"), default="accept")
        p.set_defaults(func=func)

    p = sub.add_parser("revoke-key", help="queue a self-signed key revocation")
    _add_common(p)
    p.add_argument("--keystore", required=True)
    p.set_defaults(func=cmd_revoke_key)

    p = sub.add_parser("revoke-sig", help="revoke a signature you issued")
    _add_common(p)
    p.add_argument("--keystore", required=True)
    p.add_argument("--signature-id", required=True)
    p.set_defaults(func=cmd_revoke_sig)

    p = sub.add_parser("lookup", help="search keys registered in the last 12 months")
    _add_common(p)
    p.add_argument("--email")
    p.add_argument("--name")
    p.add_argument("--key-id")
    p.set_defaults(func=cmd_lookup)

    p = sub.add_parser("history", help="all records involving a key")
    _add_common(p)
    p.add_argument("--key-id", required=True)
    p.set_defaults(func=cmd_history)

    p = sub.add_parser("status", help="valid | expired | revoked | unknown")
    _add_common(p)
    p.add_argument("--key-id", required=True)
    p.set_defaults(func=cmd_status)

    p = sub.add_parser("chain", help="chain maintenance")
    chain_sub = p.add_subparsers(dest="chain_verb", required=True)
    pv = chain_sub.add_parser("verify", help="audit a chain file")
    pv.add_argument("--chain", required=True)
    pv.set_defaults(func=cmd_chain_verify)

    p = sub.add_parser("var", help="verification requests")
    var_sub = p.add_subparsers(dest="var_verb", required=True)
    pl = var_sub.add_parser("list", help="list VARs with derived status")
    _add_common(pl)
    _add_selection(pl)
    pl.set_defaults(func=cmd_var_list)
    pf = var_sub.add_parser("fulfil", help="claim and run a VAR session")
    _add_common(pf)
    _add_selection(pf)
    pf.add_argument("--keystore", required=True, help="verifier key pair")
    pf.add_argument("--peer-keystore", required=True, help="VAR target key pair")
    pf.add_argument("--var-id", required=True)
    pf.add_argument("--seed", type=int, required=True)
    pf.add_argument("--min-bits", type=int, default=2048)
    pf.set_defaults(func=cmd_var_fulfil)

    p = sub.add_parser("sim", help="scenario engine")
    sim_sub = p.add_subparsers(dest="sim_verb", required=True)
    pr = sim_sub.add_parser("run", help="run a scenario from a config file")
    pr.add_argument("--config", required=True)
    pr.add_argument("--chain", required=True, help="output chain file")
    pr.add_argument("--metrics", help="output metrics file")
    pr.set_defaults(func=cmd_sim_run)

    p = sub.add_parser("reach-report", help="alive/dead/unknown per email address")
    _add_common(p)
    p.set_defaults(func=cmd_reach_report)

    p = sub.add_parser("cert-monitor", help="cross-vantage certificate comparison")
    p.add_argument("--observations", required=True, help="file: vantage identifier key_hex day")
    p.set_defaults(func=cmd_cert_monitor)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AuthcoinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
