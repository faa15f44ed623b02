import pytest

from bftrange import scenario as scenario_mod
from bftrange.runner import Runtime


def make_scenario(**overrides) -> scenario_mod.Scenario:
    base = {"name": "test", "seed": 1, "duration_ms": 2000,
            "twin": {"enabled": False}}
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            base[key].update(value)
        else:
            base[key] = value
    return scenario_mod.validate(base)


def run_scenario(seed=None, store_root=None, pollable=True, run_id="test",
                 **overrides):
    scn = make_scenario(**overrides)
    rt = Runtime(scn, seed=seed, store_root=store_root, run_id=run_id,
                 pollable=pollable)
    metrics = rt.run()
    return rt, metrics


class FakeRt:
    """Minimal runtime facade for driving a Replica by hand."""

    def __init__(self, seed=0):
        from bftrange.network import KeyRing
        self.keyring = KeyRing(seed)
        self.t = 0
        self.sent = []        # (src, dst, body)
        self.broadcasts = []  # (src, dsts, body)
        self.audits = []      # (src, body)
        self.scheduled = []   # (target, due, payload)

    def now(self):
        return self.t

    def send(self, src, dst, body):
        self.sent.append((src, dst, body))
        return 0

    def broadcast(self, src, dsts, body):
        self.broadcasts.append((src, list(dsts), body))
        return []

    def audit(self, src, body):
        self.audits.append((src, dict(body)))

    def publish(self, src, topic, body):
        pass

    def schedule(self, target, due, payload):
        self.scheduled.append((target, due, payload))
        return len(self.scheduled)

    def rng(self, stream):
        import random
        return random.Random(0)

    def tag(self, src, body):
        return self.keyring.tag(src, body)

    def verify(self, src, body, tag):
        return self.keyring.verify(src, body, tag)

    def falsify(self, src, report):
        return report

    def audit_types(self):
        return [b["type"] for _, b in self.audits]


class FakeEnv:
    """Envelope stand-in carrying a verified body from src."""

    def __init__(self, keyring, src, body):
        self.src = src
        self.dst = None
        self.body = body
        self.authenticator = keyring.tag(src, body)
        self.sent_at = None

    def verify(self, keyring):
        return keyring.verify(self.src, self.body, self.authenticator)


@pytest.fixture
def fake_rt():
    return FakeRt()
