"""Single-node pending pool and mining pipeline.

The node is the only path by which records reach the chain.  User-facing
submission rejects VARecords outright: VARs exist solely because the
node itself generates them after each mined block and carries them into
the next one.
"""

from __future__ import annotations

from typing import Optional

from . import records as rec
from .chain import Block, Chain, mine_block
from .errors import EmptyPending, InvalidRecord
from .var import SelectionParams, generate_vars


class Node:
    def __init__(self, chain: Chain, provider, selection: Optional[SelectionParams] = None):
        self.chain = chain
        self.provider = provider
        self.selection = selection
        self.pending: list[rec.Record] = []
        self._system_vars: list[rec.VARecord] = []
        self.generated_vars: list[rec.VARecord] = []

    def submit(self, record: rec.Record) -> None:
        if isinstance(record, rec.VARecord):
            raise InvalidRecord(rec.get_id(record), "VARs cannot be issued manually")
        self.pending.append(record)

    def submit_many(self, records_) -> None:
        for record in records_:
            self.submit(record)

    def mine(self, timestamp: int) -> Optional[Block]:
        """Mine queued records (system VARs first) into a new block, then
        generate the next batch of VARs from it.  Returns None when there
        is nothing to mine."""
        batch = self._system_vars + self.pending
        if not batch:
            return None
        try:
            block = mine_block(self.chain, batch, timestamp, self.provider)
        except EmptyPending:
            # everything queued was already on chain
            self._system_vars = []
            self.pending = []
            return None
        self.chain._append_unchecked(block)
        self._system_vars = []
        self.pending = []
        if self.selection is not None:
            new_vars = generate_vars(self.chain, block, self.selection)
            self._system_vars = list(new_vars)
            self.generated_vars.extend(new_vars)
        return block
