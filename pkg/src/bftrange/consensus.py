"""Replicated supervisory state machine: n = 3f+1 replicas, 2f+1 quorums.

Three-phase commit (proposal, prepare, commit) under a rotating leader, with
view changes driven by per-phase timers.  Safety rests on three rules every
correct replica enforces:

  1. at most one prepare vote and one commit vote per (view, seq);
  2. a commit vote only for the digest it prepared, backed by a 2f+1
     prepare quorum;
  3. a new view is entered only through a certificate-validated NewView
     whose re-proposals are recomputed locally from the carried ViewChange
     set, so a lying new leader is rejected.

Decisions additionally adopt a 2f+1 commit certificate observed on the wire
even without an own prepare (the deciding quorum argument does not depend on
the decider's votes), which lets a replica that prepared a conflicting
equivocation variant converge without state transfer.  Vote and certificate
authenticity uses the keyed tags from the network layer as stand-in
signatures; a Byzantine replica can sign its own lies but never another
replica's votes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .network import canonical_bytes
from .sim import MS

REQUEST = "Request"
PRE_PREPARE = "PrePrepare"
PREPARE = "Prepare"
COMMIT = "Commit"
VIEW_CHANGE = "ViewChange"
NEW_VIEW = "NewView"
STATE_REPORT = "StateReport"
ACTIVATE = "Activate"

MESSAGE_KINDS = (REQUEST, PRE_PREPARE, PREPARE, COMMIT, VIEW_CHANGE, NEW_VIEW,
                 STATE_REPORT, ACTIVATE)


class ConsensusError(Exception):
    pass


class InvalidConfig(ConsensusError):
    pass


def quorum_threshold(n: int, f: int) -> int:
    if n != 3 * f + 1:
        raise InvalidConfig(f"n={n} is not 3f+1 for f={f}")
    return 2 * f + 1


def leader_of(view: int, membership: list[str]) -> str:
    return membership[view % len(membership)]


def request_digest(request: dict) -> str:
    return hashlib.blake2b(canonical_bytes(request), digest_size=12).hexdigest()


def request_id(request: dict) -> tuple:
    return (request["client"], request["rid"])


def noop_request(view: int, seq: int) -> dict:
    return {"client": "system", "rid": f"noop/{view}/{seq}", "command": {"kind": "noop"}}


@dataclass
class ConsensusConfig:
    f: int = 1
    timeout: int = 300 * MS
    checkpoint_interval: int = 8
    pipeline_depth: int = 1
    backoff: float = 2.0
    max_backoff_exp: int = 6

    def __post_init__(self):
        if self.timeout <= 0:
            raise InvalidConfig("timeout must be positive")
        if self.f < 1:
            raise InvalidConfig("f must be at least 1")

    @property
    def n(self) -> int:
        return 3 * self.f + 1

    @property
    def quorum(self) -> int:
        return quorum_threshold(self.n, self.f)


# -- wire bodies ------------------------------------------------------------
# Every body carries its sender; receivers require body sender == envelope
# src, which makes relayed votes third-party verifiable by reconstruction.

def request_body(sender: str, request: dict) -> dict:
    return {"kind": REQUEST, "sender": sender, "request": request}


def preprepare_body(sender: str, view: int, seq: int, request: dict) -> dict:
    return {"kind": PRE_PREPARE, "sender": sender, "view": view, "seq": seq,
            "digest": request_digest(request), "request": request}


def prepare_body(sender: str, view: int, seq: int, digest: str) -> dict:
    return {"kind": PREPARE, "sender": sender, "view": view, "seq": seq,
            "digest": digest}


def commit_body(sender: str, view: int, seq: int, digest: str) -> dict:
    return {"kind": COMMIT, "sender": sender, "view": view, "seq": seq,
            "digest": digest}


def viewchange_body(sender: str, new_view: int, last_decided: int,
                    prepared: dict, pending: list[dict]) -> dict:
    return {"kind": VIEW_CHANGE, "sender": sender, "view": new_view,
            "last_decided": last_decided, "prepared": prepared,
            "pending": pending}


def newview_body(sender: str, view: int, viewchanges: list, proposals: dict) -> dict:
    return {"kind": NEW_VIEW, "sender": sender, "view": view,
            "viewchanges": viewchanges, "proposals": proposals}


def statereport_body(sender: str, q: str, **extra) -> dict:
    return {"kind": STATE_REPORT, "sender": sender, "q": q, **extra}


@dataclass
class SlotView:
    """Per-(seq, view) voting record."""

    digest: str | None = None
    request: dict | None = None
    prepares: dict[str, set] = field(default_factory=dict)   # digest -> senders
    commits: dict[str, set] = field(default_factory=dict)
    prepare_sigs: dict = field(default_factory=dict)          # (digest, sender) -> tag
    commit_sigs: dict = field(default_factory=dict)
    sent_prepare: bool = False
    sent_commit: bool = False
    prepared: bool = False


class Replica:
    """One deterministic consensus state machine driven by scheduler events."""

    def __init__(self, rid: str, membership: list[str], config: ConsensusConfig,
                 rt, active: bool = True):
        self.rid = rid
        self.membership = list(membership)
        self.config = config
        self.rt = rt  # runtime facade: now/send/broadcast/audit/schedule/tag/verify
        self.active = active
        self.retired = False
        self.crashed = False

        self.view = 0
        self.next_seq = 1
        self.exec_seq = 0           # highest contiguously applied sequence
        self.slots: dict[int, dict[int, SlotView]] = {}
        self.decided: dict[int, dict] = {}
        self.pending: dict[tuple, dict] = {}
        self.decided_rids: set = set()
        self.requests_by_digest: dict[str, dict] = {}
        self.seq_of_rid: dict[tuple, int] = {}

        self.anchor_view = 0        # view of last decision, for timeout backoff
        self.in_view_change = False
        self.vc_target = 0
        self.viewchanges: dict[int, dict[str, tuple]] = {}
        self.sent_newview: set = set()

        self._timer_seq = 0
        self._armed: dict[int, tuple] = {}
        self._timer_by_rid: dict[tuple, int] = {}
        self._vc_timer: int | None = None
        # proposals racing ahead of their NewView wait here until the view
        # transition lands (delivery order across a view change is arbitrary)
        self._future_pp: dict[int, list[tuple[str, dict]]] = {}

        self._sync_votes: dict[tuple, set] = {}
        self._sync_views: dict[str, int] = {}
        self.decisions_since_report = 0

    # -- helpers -----------------------------------------------------------

    @property
    def quorum(self) -> int:
        return self.config.quorum

    def leader(self, view: int | None = None) -> str:
        return leader_of(self.view if view is None else view, self.membership)

    def is_leader(self) -> bool:
        return self.leader() == self.rid

    def slot(self, seq: int, view: int) -> SlotView:
        return self.slots.setdefault(seq, {}).setdefault(view, SlotView())

    def current_timeout(self) -> int:
        attempts = min(max(self.view, self.vc_target) - self.anchor_view,
                       self.config.max_backoff_exp)
        return int(self.config.timeout * (self.config.backoff ** max(attempts, 0)))

    def decided_log(self) -> list[tuple]:
        return [(s, self.decided[s]["digest"], self.decided[s]["request"],
                 self.decided[s]["view"]) for s in sorted(self.decided)]

    def _audit(self, body: dict) -> None:
        self.rt.audit(self.rid, body)

    def _broadcast(self, body: dict) -> None:
        if self.crashed or self.retired or not self.active:
            return
        peers = [m for m in self.membership if m != self.rid]
        self.rt.broadcast(self.rid, peers, body)

    # -- timers --------------------------------------------------------------

    def _arm(self, rid_key: tuple | None, kind: str, delay: int) -> int:
        self._timer_seq += 1
        tid = self._timer_seq
        deadline = self.rt.now() + delay
        self._armed[tid] = (kind, rid_key, deadline)
        self.rt.schedule(self.rid, deadline, ("timeout", tid))
        return tid

    def _rearm_request(self, rid_key: tuple) -> None:
        if rid_key in self.decided_rids:
            return
        old = self._timer_by_rid.pop(rid_key, None)
        if old is not None:
            self._armed.pop(old, None)
        self._timer_by_rid[rid_key] = self._arm(rid_key, "request", self.current_timeout())

    def _cancel_request_timer(self, rid_key: tuple) -> None:
        tid = self._timer_by_rid.pop(rid_key, None)
        if tid is not None:
            self._armed.pop(tid, None)

    # -- entry points ---------------------------------------------------------

    def on_envelope(self, env) -> None:
        if self.crashed or self.retired:
            return
        if not env.verify(self.rt.keyring):
            self._audit({"type": "auth_failed", "from": env.src})
            return
        body = env.body
        if not isinstance(body, dict) or body.get("sender") != env.src:
            self._audit({"type": "malformed", "from": env.src})
            return
        kind = body.get("kind")
        if not self.active and kind not in (ACTIVATE,):
            return
        handler = {
            REQUEST: self._on_request,
            PRE_PREPARE: self._on_preprepare,
            PREPARE: self._on_prepare,
            COMMIT: self._on_commit,
            VIEW_CHANGE: self._on_viewchange,
            NEW_VIEW: self._on_newview,
            STATE_REPORT: self._on_statereport,
            ACTIVATE: self._on_activate,
        }.get(kind)
        if handler is None:
            self._audit({"type": "malformed", "from": env.src, "kind": str(kind)})
            return
        handler(body, env)

    def on_control(self, event) -> None:
        """Scheduler events: timers plus crash/recover control."""
        payload = event.payload
        if not isinstance(payload, tuple):
            return
        if payload[0] == "timeout":
            if not self.crashed and not self.retired and self.active:
                self._on_timeout(payload[1])
        elif payload[0] == "crash":
            self.crashed = True
        elif payload[0] == "recover":
            if self.crashed:
                self.crashed = False
                self._begin_sync()

    # -- request / three phases ----------------------------------------------

    def _on_request(self, body: dict, env) -> None:
        request = body["request"]
        rid_key = request_id(request)
        if rid_key in self.decided_rids:
            return
        self.pending[rid_key] = request
        self.requests_by_digest[request_digest(request)] = request
        if rid_key not in self._timer_by_rid and not self.in_view_change:
            self._rearm_request(rid_key)
        self.try_propose()
        # The request may complete a commit certificate that was waiting
        # for its payload.
        seq = self.seq_of_rid.get(rid_key)
        if seq is not None:
            self._check_decide(seq)

    def try_propose(self) -> None:
        if not self.is_leader() or self.in_view_change or self.crashed \
                or self.retired or not self.active:
            return
        outstanding = sum(1 for s in range(self.exec_seq + 1, self.next_seq)
                          if s not in self.decided)
        for rid_key in list(self.pending):
            if outstanding >= self.config.pipeline_depth:
                break
            if rid_key in self.decided_rids or rid_key in self.seq_of_rid:
                continue
            request = self.pending[rid_key]
            seq = self.next_seq
            self.next_seq += 1
            self.seq_of_rid[rid_key] = seq
            pp = preprepare_body(self.rid, self.view, seq, request)
            self._broadcast(pp)
            self._accept_preprepare(pp)
            outstanding += 1

    def _on_preprepare(self, body: dict, env) -> None:
        self._handle_preprepare(env.src, body)

    def _handle_preprepare(self, src: str, body: dict) -> None:
        if body["view"] > self.view:
            stash = self._future_pp.setdefault(body["view"], [])
            if len(stash) < 1024:
                stash.append((src, body))
            return
        if body["view"] != self.view or self.in_view_change:
            return
        if src != self.leader(body["view"]):
            self._audit({"type": "preprepare_rejected", "from": src,
                         "view": body["view"], "reason": "not_leader"})
            return
        if request_digest(body["request"]) != body["digest"]:
            self._audit({"type": "preprepare_rejected", "from": src,
                         "view": body["view"], "reason": "digest_mismatch"})
            return
        self._accept_preprepare(body)

    def _accept_preprepare(self, body: dict) -> None:
        seq, view, digest = body["seq"], body["view"], body["digest"]
        request = body["request"]
        if seq in self.decided:
            return
        sv = self.slot(seq, view)
        if sv.digest is not None and sv.digest != digest:
            # Conflicting proposal for a slot we already accepted: evidence
            # of leader equivocation; keep the first, never re-vote.
            self._audit({"type": "conflicting_preprepare", "seq": seq,
                         "view": view, "kept": sv.digest, "saw": digest})
            return
        rid_key = request_id(request)
        first = sv.digest is None
        if first:
            sv.digest = digest
            sv.request = request
            self.requests_by_digest[digest] = request
            self.seq_of_rid[rid_key] = seq
            self.pending.setdefault(rid_key, request)
        if not sv.sent_prepare:
            sv.sent_prepare = True
            pb = prepare_body(self.rid, view, seq, digest)
            sv.prepares.setdefault(digest, set()).add(self.rid)
            sv.prepare_sigs[(digest, self.rid)] = self.rt.tag(self.rid, pb)
            self._broadcast(pb)
        if rid_key not in self.decided_rids:
            self._rearm_request(rid_key)
        self._check_prepared(seq, view)
        self._check_decide(seq)

    def _on_prepare(self, body: dict, env) -> None:
        seq, view, digest = body["seq"], body["view"], body["digest"]
        sv = self.slot(seq, view)
        sv.prepares.setdefault(digest, set()).add(env.src)
        sv.prepare_sigs[(digest, env.src)] = env.authenticator
        self._check_prepared(seq, view)

    def _check_prepared(self, seq: int, view: int) -> None:
        sv = self.slot(seq, view)
        if sv.prepared or not sv.sent_prepare or sv.digest is None:
            return
        if view != self.view or self.in_view_change:
            return
        votes = sv.prepares.get(sv.digest, set())
        if len(votes) >= self.quorum:
            sv.prepared = True
            if not sv.sent_commit:
                sv.sent_commit = True
                cb = commit_body(self.rid, view, seq, sv.digest)
                sv.commits.setdefault(sv.digest, set()).add(self.rid)
                sv.commit_sigs[(sv.digest, self.rid)] = self.rt.tag(self.rid, cb)
                self._broadcast(cb)
            if sv.request is not None:
                self._rearm_request(request_id(sv.request))
            self._check_decide(seq)

    def _on_commit(self, body: dict, env) -> None:
        seq, view, digest = body["seq"], body["view"], body["digest"]
        sv = self.slot(seq, view)
        sv.commits.setdefault(digest, set()).add(env.src)
        sv.commit_sigs[(digest, env.src)] = env.authenticator
        self._check_decide(seq)

    def _check_decide(self, seq: int) -> None:
        if seq in self.decided:
            return
        for view in sorted(self.slots.get(seq, {})):
            sv = self.slots[seq][view]
            for digest, senders in sv.commits.items():
                if len(senders) >= self.quorum and digest in self.requests_by_digest:
                    self._decide(seq, view, digest, sorted(senders))
                    return

    def _decide(self, seq: int, view: int, digest: str, quorum: list[str]) -> None:
        if seq in self.decided:
            if self.decided[seq]["digest"] != digest:
                self._audit({"type": "safety_assertion", "seq": seq,
                             "have": self.decided[seq]["digest"], "saw": digest})
            return
        request = self.requests_by_digest[digest]
        self.decided[seq] = {"digest": digest, "request": request,
                             "view": view, "quorum": quorum}
        rid_key = request_id(request)
        self.decided_rids.add(rid_key)
        self.pending.pop(rid_key, None)
        self._cancel_request_timer(rid_key)
        self.anchor_view = max(self.anchor_view, self.view)
        self._audit({"type": "decision", "seq": seq, "view": view,
                     "digest": digest, "command": request["command"],
                     "request_id": list(rid_key), "quorum": quorum})
        self._apply_ready()
        self.decisions_since_report += 1
        if self.decisions_since_report >= self.config.checkpoint_interval:
            self.decisions_since_report = 0
            self.emit_state_report()
        self.try_propose()

    def _apply_ready(self) -> None:
        while (self.exec_seq + 1) in self.decided:
            self.exec_seq += 1
            entry = self.decided[self.exec_seq]
            self._apply_command(self.exec_seq, entry["request"]["command"])
        if self.decided:
            self.next_seq = max(self.next_seq, max(self.decided) + 1)

    def _apply_command(self, seq: int, command: dict) -> None:
        kind = command.get("kind")
        if kind == "config":
            param, value = command["param"], command["value"]
            if param == "timeout_ms":
                self.config.timeout = int(value * MS)
            elif param == "checkpoint_interval":
                self.config.checkpoint_interval = int(value)
            elif param == "pipeline_depth":
                self.config.pipeline_depth = int(value)
            self._audit({"type": "config_applied", "param": param, "value": value,
                         "seq": seq, "decision_ref": command.get("decision_ref")})
        elif kind == "replace":
            old, new = command["remove"], command["add"]
            if old in self.membership:
                idx = self.membership.index(old)
                self.membership[idx] = new
            self._audit({"type": "membership_changed", "remove": old,
                         "add": new, "seq": seq})
            if self.rid == old:
                self.retired = True

    # -- timeouts and view changes ---------------------------------------------

    def _on_timeout(self, tid: int) -> None:
        entry = self._armed.pop(tid, None)
        if entry is None:
            return
        kind, rid_key, deadline = entry
        if kind == "request":
            if rid_key in self.decided_rids:
                return
            self._timer_by_rid.pop(rid_key, None)
            self._audit({"type": "deadline_violation", "request_id": list(rid_key),
                         "view": self.view, "deadline": deadline})
            self.start_view_change(max(self.view, self.vc_target) + 1, "timeout")
        elif kind == "viewchange":
            if self.in_view_change and self.vc_target == rid_key:
                self.start_view_change(self.vc_target + 1, "newview_timeout")

    def start_view_change(self, target: int, reason: str) -> None:
        if target <= self.view or (self.in_view_change and target <= self.vc_target):
            return
        self.in_view_change = True
        self.vc_target = target
        for rid_key in list(self._timer_by_rid):
            self._cancel_request_timer(rid_key)
        if self._vc_timer is not None:
            self._armed.pop(self._vc_timer, None)
        self._vc_timer = self._arm(target, "viewchange", self.current_timeout())
        self._audit({"type": "view_change_started", "from_view": self.view,
                     "to_view": target, "reason": reason,
                     "suspected": self.leader(self.view)})
        vc = viewchange_body(self.rid, target, self.exec_seq,
                             self._prepared_certs(), self._pending_payloads())
        self._store_viewchange(self.rid, vc, self.rt.tag(self.rid, vc))
        self._broadcast(vc)
        self._maybe_newview(target)

    def _prepared_certs(self) -> dict:
        """Best cert per sequence: commit-backed if we decided, else the
        highest prepared view.  Votes carry (sender, tag) pairs verifiable
        by reconstruction."""
        certs: dict[str, dict] = {}
        for seq, entry in self.decided.items():
            view, digest = entry["view"], entry["digest"]
            sv = self.slots.get(seq, {}).get(view)
            votes = []
            if sv is not None:
                votes = [[s, sv.commit_sigs[(digest, s)]]
                         for s in sorted(sv.commits.get(digest, set()))
                         if (digest, s) in sv.commit_sigs]
            if len(votes) >= self.quorum:
                certs[str(seq)] = {"view": view, "digest": digest,
                                   "request": entry["request"],
                                   "votes": votes[: self.quorum], "phase": "commit"}
        for seq, views in self.slots.items():
            if str(seq) in certs:
                continue
            best = None
            for view in sorted(views, reverse=True):
                sv = views[view]
                if sv.prepared and sv.digest is not None:
                    votes = [[s, sv.prepare_sigs[(sv.digest, s)]]
                             for s in sorted(sv.prepares.get(sv.digest, set()))
                             if (sv.digest, s) in sv.prepare_sigs]
                    if len(votes) >= self.quorum:
                        best = {"view": view, "digest": sv.digest,
                                "request": sv.request,
                                "votes": votes[: self.quorum], "phase": "prepare"}
                        break
            if best is not None:
                certs[str(seq)] = best
        return certs

    def _pending_payloads(self) -> list[dict]:
        return [self.pending[k] for k in sorted(self.pending, key=str)
                if k not in self.decided_rids]

    def _store_viewchange(self, sender: str, body: dict, tag: str) -> None:
        self.viewchanges.setdefault(body["view"], {})[sender] = (body, tag)

    def _on_viewchange(self, body: dict, env) -> None:
        target = body["view"]
        self._store_viewchange(env.src, body, env.authenticator)
        if target <= self.view:
            return
        # Join rule: f+1 distinct replicas moving past our view means our
        # timer simply has not fired yet; follow the smallest such view.
        above = {v for v, senders in self.viewchanges.items()
                 if v > max(self.view, self.vc_target) and len(senders) >= self.config.f + 1}
        if above and not (self.in_view_change and self.vc_target >= min(above)):
            self.start_view_change(min(above), "join")
        self._maybe_newview(target)

    def _maybe_newview(self, target: int) -> None:
        if self.leader(target) != self.rid or target in self.sent_newview:
            return
        if target <= self.view:
            return
        msgs = self.viewchanges.get(target, {})
        valid = [(s, b, t) for s, (b, t) in sorted(msgs.items())
                 if self._validate_viewchange(s, b, t)]
        if len(valid) < self.quorum:
            return
        chosen = valid[: self.quorum]
        proposals = self._compute_proposals(chosen)
        nv = newview_body(self.rid, target,
                          [[s, b, t] for s, b, t in chosen], proposals)
        self.sent_newview.add(target)
        self._broadcast(nv)
        self._audit({"type": "new_view", "view": target,
                     "proposals": len(proposals)})
        self._enter_view(target, proposals)
        for vc_sender, vc_body, _ in chosen:
            for req in vc_body.get("pending", []):
                rid_key = request_id(req)
                if rid_key not in self.decided_rids:
                    self.pending.setdefault(rid_key, req)
                    self.requests_by_digest.setdefault(request_digest(req), req)
        self.try_propose()

    def _validate_viewchange(self, sender: str, body: dict, tag: str) -> bool:
        if body.get("kind") != VIEW_CHANGE or body.get("sender") != sender:
            return False
        if not self.rt.verify(sender, body, tag):
            return False
        for seq_s, cert in body.get("prepared", {}).items():
            if not self._validate_cert(int(seq_s), cert):
                return False
        return True

    def _validate_cert(self, seq: int, cert: dict) -> bool:
        digest, request = cert.get("digest"), cert.get("request")
        if request is None or request_digest(request) != digest:
            return False
        builder = commit_body if cert.get("phase") == "commit" else prepare_body
        seen = set()
        for sender, tag in cert.get("votes", []):
            vb = builder(sender, cert["view"], seq, digest)
            if self.rt.verify(sender, vb, tag):
                seen.add(sender)
        return len(seen) >= self.quorum

    def _compute_proposals(self, chosen: list[tuple]) -> dict:
        """Deterministic re-proposals from a ViewChange set: highest-view
        cert wins per sequence; gaps up to the highest cert get no-ops."""
        best: dict[int, dict] = {}
        low = None
        for _, body, _ in chosen:
            ld = body.get("last_decided", 0)
            low = ld if low is None else min(low, ld)
            for seq_s, cert in body.get("prepared", {}).items():
                seq = int(seq_s)
                cur = best.get(seq)
                if cur is None or cert["view"] > cur["view"]:
                    best[seq] = cert
        if not best:
            return {}
        top = max(best)
        start = (low or 0) + 1
        proposals = {}
        for seq in range(min(start, min(best)), top + 1):
            if seq in best:
                proposals[str(seq)] = {"digest": best[seq]["digest"],
                                       "request": best[seq]["request"]}
            else:
                req = noop_request(0, seq)
                proposals[str(seq)] = {"digest": request_digest(req), "request": req}
        return proposals

    def _on_newview(self, body: dict, env) -> None:
        view = body["view"]
        if view <= self.view:
            return
        if env.src != leader_of(view, self.membership):
            self._audit({"type": "newview_rejected", "from": env.src,
                         "view": view, "reason": "not_leader"})
            return
        vcs = body.get("viewchanges", [])
        valid = [(s, b, t) for s, b, t in vcs if self._validate_viewchange(s, b, t)]
        if len({s for s, _, _ in valid}) < self.quorum:
            self._audit({"type": "newview_rejected", "from": env.src,
                         "view": view, "reason": "bad_viewchange_set"})
            self.start_view_change(view + 1, "invalid_newview")
            return
        expected = self._compute_proposals(valid[: self.quorum])
        if expected != body.get("proposals"):
            self._audit({"type": "newview_rejected", "from": env.src,
                         "view": view, "reason": "proposal_mismatch"})
            self.start_view_change(view + 1, "invalid_newview")
            return
        self._enter_view(view, body["proposals"])

    def _enter_view(self, view: int, proposals: dict) -> None:
        self.view = view
        self.in_view_change = False
        self.vc_target = view
        if self._vc_timer is not None:
            self._armed.pop(self._vc_timer, None)
            self._vc_timer = None
        # Sequence numbers assigned in dead views without a surviving
        # certificate are reusable: had any of them possibly decided, a
        # certificate would appear in every valid ViewChange quorum.
        covered = [int(s) for s in proposals] + list(self.decided) + [self.exec_seq]
        self.next_seq = max(covered) + 1
        # assignments from dead views are void; decided and re-proposed slots
        # re-register below
        self.seq_of_rid = {request_id(e["request"]): s
                           for s, e in self.decided.items()}
        for seq_s in sorted(proposals, key=int):
            seq = int(seq_s)
            prop = proposals[seq_s]
            if seq in self.decided:
                if self.decided[seq]["digest"] != prop["digest"]:
                    self._audit({"type": "safety_assertion", "seq": seq,
                                 "have": self.decided[seq]["digest"],
                                 "saw": prop["digest"]})
                continue
            pp = preprepare_body(leader_of(view, self.membership), view, seq,
                                 prop["request"])
            self._accept_preprepare(pp)
        for rid_key in sorted(self.pending, key=str):
            if rid_key not in self.decided_rids:
                self._rearm_request(rid_key)
        for view_s in sorted(v for v in self._future_pp if v <= view):
            for src, body in self._future_pp.pop(view_s):
                self._handle_preprepare(src, body)

    # -- state reports and sync --------------------------------------------------

    def checkpoint(self) -> tuple[int, str]:
        """Digest of the decided log up to the latest checkpoint boundary."""
        interval = self.config.checkpoint_interval
        boundary = (self.exec_seq // interval) * interval
        entries = [(s, self.decided[s]["digest"]) for s in sorted(self.decided)
                   if s <= boundary]
        digest = hashlib.blake2b(canonical_bytes(entries), digest_size=12).hexdigest()
        return boundary, digest

    def report_state(self, query: str = "checkpoint") -> dict:
        boundary, digest = self.checkpoint()
        return {"type": "state_report", "replica": self.rid,
                "checkpoint_seq": boundary, "digest": digest,
                "last_decided_seq": self.exec_seq, "view": self.view}

    def emit_state_report(self) -> None:
        self._audit(self.rt.falsify(self.rid, self.report_state()))

    def _begin_sync(self) -> None:
        self._sync_votes.clear()
        self._sync_views.clear()
        self._broadcast(statereport_body(self.rid, "sync", have=self.exec_seq))
        for rid_key in self.pending:
            if rid_key not in self.decided_rids:
                self._rearm_request(rid_key)

    def _on_statereport(self, body: dict, env) -> None:
        q = body.get("q")
        if q == "sync":
            entries = [[s, e["digest"], e["request"], e["view"]]
                       for s, e in sorted(self.decided.items())
                       if s > body.get("have", 0)]
            resp = statereport_body(self.rid, "resp", entries=entries,
                                    view=self.view, report=self.rt.falsify(
                                        self.rid, self.report_state()))
            self.rt.send(self.rid, env.src, resp)
        elif q == "resp":
            self._sync_views[env.src] = body.get("view", 0)
            adopted = 0
            for seq, digest, request, view in body.get("entries", []):
                key = (int(seq), digest)
                voters = self._sync_votes.setdefault(key, set())
                voters.add(env.src)
                if len(voters) >= self.config.f + 1 and int(seq) not in self.decided:
                    self.requests_by_digest[digest] = request
                    self._decide(int(seq), view, digest, sorted(voters))
                    adopted += 1
            if adopted:
                self._audit({"type": "sync_adopted", "count": adopted,
                             "through": self.exec_seq})
            views = sorted(self._sync_views.values(), reverse=True)
            if len(views) > self.config.f:
                safe_view = views[self.config.f]
                if safe_view > self.view:
                    self.view = safe_view
                    self.in_view_change = False
                    self.vc_target = max(self.vc_target, safe_view)

    def _on_activate(self, body: dict, env) -> None:
        if self.active:
            return
        self.active = True
        self.membership = list(body["membership"])
        self.view = int(body.get("view", 0))
        self._begin_sync()
        self._audit({"type": "activated", "membership": self.membership,
                     "view": self.view})
