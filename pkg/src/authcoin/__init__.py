"""Authcoin: a blockchain-backed key registry with bidirectional
challenge-response validation & authentication, automated verification
requests, and a deterministic multi-actor simulation harness."""

from .crypto import (
    DIGEST_SIZE,
    KeyMaterial,
    StandardProvider,
    ToyProvider,
    digest,
    get_provider,
    load_keystore,
    save_keystore,
)
from .chain import (
    Block,
    Chain,
    append_block,
    load,
    mine_block,
    persist,
    verify_chain,
)
from .errors import AuthcoinError
from .keylife import (
    LookupQuery,
    formal_validate,
    history,
    key_status,
    lookup_key,
    revoke_key,
    revoke_signature,
)
from .node import Node
from .protocol import (
    ChallengeSpec,
    VASession,
    detect_posting_mismatch,
    evaluate,
    fulfil_challenge,
    issue_challenge,
    post_session_records,
    start_session,
)
from .sim import (
    Metrics,
    ScenarioConfig,
    World,
    monitor_certificates,
    reachability_report,
    run_scenario,
    suspicion_closure,
)
from .var import SelectionParams, eligible, fulfil_var, generate_vars, var_status

__version__ = "0.1.0"
