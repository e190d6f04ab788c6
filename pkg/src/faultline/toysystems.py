"""Three bundled scripted systems with switchable bugs, for offline corpora.

Each system is small (3-4 agents), fully deterministic, and parameterized by
named bug switches so the same task set yields both successful and failing
trajectories. System names encode their active bugs ("arith[drop_carry]") so
a stored trajectory is enough to rebuild both the system that produced it and
its bug-free twin.

Policies are total: they fall back to placeholder actions on unparseable
upstream content, because replay feeds them corrupted histories on purpose.
"""

from __future__ import annotations

import random
import re
from typing import Iterable

from .harness import BoundAgent, History, SystemSpec
from .trajectory import AgentId

ARITH = "arith"
RELAY = "relay"
LOOKUP = "lookup"

KINDS = (ARITH, RELAY, LOOKUP)

#: Valid bug switch names per system kind.
BUGS: dict[str, frozenset[str]] = {
    ARITH: frozenset({"swap_operands", "drop_carry", "no_borrow", "truncate_result"}),
    RELAY: frozenset({"drop_second_op", "skip_stage1", "force_lower", "truncate_tail"}),
    LOOKUP: frozenset({"wrong_row", "add_instead", "append_units"}),
}

#: Benchmark-style domain label for each system kind.
DOMAINS: dict[str, str] = {ARITH: "math", RELAY: "coding", LOOKUP: "agentic"}

PRICE_TABLE: dict[str, int] = {
    "apple": 3, "date": 9, "fig": 2, "kiwi": 4,
    "lime": 6, "mango": 8, "pear": 5, "plum": 7,
}


def _round_robin(roster_agents: tuple[AgentId, ...]):
    def scheduler(t: int, history: History) -> AgentId:
        return roster_agents[t % len(roster_agents)]
    return scheduler


def _stop_after(n: int):
    def stop(history: History) -> bool:
        return len(history) >= n
    return stop


def _exact_match(final_answer: str, ground_truth: str | None) -> int:
    if ground_truth is None:
        return 0
    return 1 if final_answer.strip() == ground_truth.strip() else 0


def _visibility_table(table: dict[str, tuple[str, ...]]):
    def visibility(agent: AgentId, history: History) -> History:
        allowed = table.get(agent.name)
        if allowed is None:
            return history
        return tuple(s for s in history if s.agent.name in allowed)
    return visibility


def _last_action_of(history: History, agent_name: str) -> str | None:
    for step in reversed(history):
        if step.agent.name == agent_name:
            return step.action
    return None


# --- arithmetic pipeline: Planner -> Solver -> Verifier ---------------------

_TASK_RE = re.compile(r"^\s*(-?\d+)\s*([+\-*])\s*(-?\d+)\s*$")
_PLAN_RE = re.compile(r"compute\s+(-?\d+)\s*([+\-*])\s*(-?\d+)")


def _digitwise(a: int, b: int, op) -> str:
    """Columnwise arithmetic with carries/borrows dropped; the classic bug."""
    sa, sb = str(a), str(b)
    width = max(len(sa), len(sb))
    sa, sb = sa.zfill(width), sb.zfill(width)
    digits = [str(op(int(x), int(y)) % 10) for x, y in zip(sa, sb)]
    return str(int("".join(digits)))


def _arith_system(bugs: frozenset[str], name: str) -> SystemSpec:
    planner = AgentId(0, "Planner")
    solver = AgentId(1, "Solver")
    verifier = AgentId(2, "Verifier")

    def plan(query: str, history: History, feedback: str | None) -> str:
        m = _TASK_RE.match(query)
        if not m:
            return "compute 0 + 0"
        a, op, b = m.groups()
        if "swap_operands" in bugs:
            a, b = b, a
        return f"compute {a} {op} {b}"

    def solve(query: str, history: History, feedback: str | None) -> str:
        plan_text = _last_action_of(history, "Planner") or ""
        m = _PLAN_RE.search(plan_text)
        if not m:
            return "0"
        a, op, b = int(m.group(1)), m.group(2), int(m.group(3))
        if op == "+" and "drop_carry" in bugs and a >= 0 and b >= 0:
            return _digitwise(a, b, lambda x, y: x + y)
        if op == "-" and "no_borrow" in bugs and a >= b >= 0:
            return _digitwise(a, b, lambda x, y: x - y)
        value = {"+": a + b, "-": a - b, "*": a * b}[op]
        return str(value)

    def verify(query: str, history: History, feedback: str | None) -> str:
        answer = (_last_action_of(history, "Solver") or "?").strip()
        if "truncate_result" in bugs and len(answer) > 1:
            answer = answer[:-1]
        return answer

    return SystemSpec(
        name=name,
        roster=(BoundAgent(planner, plan), BoundAgent(solver, solve), BoundAgent(verifier, verify)),
        scheduler=_round_robin((planner, solver, verifier)),
        stop_condition=_stop_after(3),
        evaluator=_exact_match,
        visibility=_visibility_table({
            "Planner": (),
            "Solver": ("Planner",),
            "Verifier": ("Solver",),
        }),
    )


def arith_tasks(n: int, seed: int) -> list[tuple[str, str]]:
    rng = random.Random(seed)
    tasks = []
    for _ in range(n):
        op = rng.choice("+-*")
        a, b = rng.randint(2, 99), rng.randint(2, 99)
        if op == "-" and a == b:
            b += 1
        value = {"+": a + b, "-": a - b, "*": a * b}[op]
        tasks.append((f"{a}{op}{b}", str(value)))
    return tasks


# --- string relay: Parser -> Shifter -> Caser -> Reporter -------------------

_RELAY_QUERY_RE = re.compile(r"^apply\s+(\w+)\s+then\s+(\w+)\s+to\s+'([^']*)'$")
_RELAY_PLAN_RE = re.compile(r"plan:\s*(\w+)\+(\w+)\s+on\s+'([^']*)'")


def _stage1(op: str, word: str) -> str:
    if op == "reverse":
        return word[::-1]
    if op == "rotate":
        return word[1:] + word[:1] if len(word) > 1 else word
    return word


def _stage2(op: str, word: str) -> str:
    if op == "upper":
        return word.upper()
    if op == "lower":
        return word.lower()
    return word


def _relay_system(bugs: frozenset[str], name: str) -> SystemSpec:
    parser = AgentId(0, "Parser")
    shifter = AgentId(1, "Shifter")
    caser = AgentId(2, "Caser")
    reporter = AgentId(3, "Reporter")

    def parse(query: str, history: History, feedback: str | None) -> str:
        m = _RELAY_QUERY_RE.match(query.strip())
        if not m:
            return "plan: none+none on ''"
        op1, op2, word = m.groups()
        if "drop_second_op" in bugs:
            op2 = "none"
        return f"plan: {op1}+{op2} on '{word}'"

    def shift(query: str, history: History, feedback: str | None) -> str:
        m = _RELAY_PLAN_RE.search(_last_action_of(history, "Parser") or "")
        if not m:
            return "?"
        op1, _, word = m.groups()
        if "skip_stage1" in bugs:
            return word or "?"
        return _stage1(op1, word) or "?"

    def case(query: str, history: History, feedback: str | None) -> str:
        m = _RELAY_PLAN_RE.search(_last_action_of(history, "Parser") or "")
        op2 = m.group(2) if m else "none"
        word = _last_action_of(history, "Shifter") or "?"
        if "force_lower" in bugs:
            return word.lower()
        return _stage2(op2, word)

    def report(query: str, history: History, feedback: str | None) -> str:
        answer = _last_action_of(history, "Caser") or "?"
        if "truncate_tail" in bugs and len(answer) > 1:
            answer = answer[:-1]
        return answer

    return SystemSpec(
        name=name,
        roster=(
            BoundAgent(parser, parse), BoundAgent(shifter, shift),
            BoundAgent(caser, case), BoundAgent(reporter, report),
        ),
        scheduler=_round_robin((parser, shifter, caser, reporter)),
        stop_condition=_stop_after(4),
        evaluator=_exact_match,
        visibility=_visibility_table({
            "Parser": (),
            "Shifter": ("Parser",),
            "Caser": ("Parser", "Shifter"),
            "Reporter": ("Caser",),
        }),
    )


def relay_tasks(n: int, seed: int) -> list[tuple[str, str]]:
    rng = random.Random(seed)
    tasks = []
    for _ in range(n):
        word = "".join(rng.choice("abcdefghijklmnopqrstuvwxyz") for _ in range(rng.randint(3, 8)))
        op1 = rng.choice(("reverse", "rotate"))
        op2 = rng.choice(("upper", "lower"))
        truth = _stage2(op2, _stage1(op1, word))
        tasks.append((f"apply {op1} then {op2} to '{word}'", truth))
    return tasks


# --- lookup-then-compute: Librarian -> Calculator -> Responder --------------

_LOOKUP_QUERY_RE = re.compile(r"^total price of (\d+) (\w+)s$")
_PRICE_RE = re.compile(r"price\s+(\w+)=(\d+)")


def _lookup_system(bugs: frozenset[str], name: str) -> SystemSpec:
    librarian = AgentId(0, "Librarian")
    calculator = AgentId(1, "Calculator")
    responder = AgentId(2, "Responder")
    items = sorted(PRICE_TABLE)

    def look_up(query: str, history: History, feedback: str | None) -> str:
        m = _LOOKUP_QUERY_RE.match(query.strip())
        if not m or m.group(2) not in PRICE_TABLE:
            return "price unknown=0"
        item = m.group(2)
        if "wrong_row" in bugs:
            item = items[(items.index(item) + 1) % len(items)]
        return f"price {item}={PRICE_TABLE[item]}"

    def compute(query: str, history: History, feedback: str | None) -> str:
        qm = _LOOKUP_QUERY_RE.match(query.strip())
        pm = _PRICE_RE.search(_last_action_of(history, "Librarian") or "")
        if not qm or not pm:
            return "0"
        n, price = int(qm.group(1)), int(pm.group(2))
        return str(n + price) if "add_instead" in bugs else str(n * price)

    def respond(query: str, history: History, feedback: str | None) -> str:
        answer = _last_action_of(history, "Calculator") or "0"
        if "append_units" in bugs:
            return f"{answer} dollars"
        return answer

    def transition(query: str, agent: AgentId, action: str, history: History) -> str | None:
        # Environment checks the stated price against the table after lookups.
        if agent.name != "Librarian":
            return None
        qm = _LOOKUP_QUERY_RE.match(query.strip())
        pm = _PRICE_RE.search(action)
        if not qm or qm.group(2) not in PRICE_TABLE:
            return "lookup failed: unknown item"
        item, truth = qm.group(2), PRICE_TABLE[qm.group(2)]
        if pm and pm.group(1) == item and int(pm.group(2)) == truth:
            return f"lookup ok: {item}={truth}"
        return f"lookup mismatch: table has {item}={truth}"

    return SystemSpec(
        name=name,
        roster=(
            BoundAgent(librarian, look_up), BoundAgent(calculator, compute),
            BoundAgent(responder, respond),
        ),
        scheduler=_round_robin((librarian, calculator, responder)),
        stop_condition=_stop_after(3),
        evaluator=_exact_match,
        transition=transition,
        visibility=_visibility_table({
            "Librarian": (),
            "Calculator": ("Librarian",),
            "Responder": ("Calculator",),
        }),
    )


def lookup_tasks(n: int, seed: int) -> list[tuple[str, str]]:
    rng = random.Random(seed)
    items = sorted(PRICE_TABLE)
    tasks = []
    for _ in range(n):
        item = rng.choice(items)
        count = rng.randint(2, 9)
        tasks.append((f"total price of {count} {item}s", str(count * PRICE_TABLE[item])))
    return tasks


# --- registry ----------------------------------------------------------------

_BUILDERS = {ARITH: _arith_system, RELAY: _relay_system, LOOKUP: _lookup_system}
_TASK_GENERATORS = {ARITH: arith_tasks, RELAY: relay_tasks, LOOKUP: lookup_tasks}


def system_name(kind: str, bugs: Iterable[str] = ()) -> str:
    bug_list = sorted(set(bugs))
    return f"{kind}[{','.join(bug_list)}]" if bug_list else kind


def parse_system_name(name: str) -> tuple[str, frozenset[str]]:
    m = re.match(r"^(\w+)(?:\[([^\]]*)\])?$", name)
    if not m or m.group(1) not in KINDS:
        raise ValueError(f"unknown toy system name {name!r}")
    kind = m.group(1)
    bugs = frozenset(b for b in (m.group(2) or "").split(",") if b)
    return kind, bugs


def build(kind: str, bugs: Iterable[str] = ()) -> SystemSpec:
    """Construct a toy system; ``bugs`` selects the switchable misbehaviors."""
    if kind not in KINDS:
        raise ValueError(f"unknown toy system kind {kind!r}; expected one of {KINDS}")
    bug_set = frozenset(bugs)
    unknown = bug_set - BUGS[kind]
    if unknown:
        raise ValueError(f"unknown bugs for {kind!r}: {sorted(unknown)}; valid: {sorted(BUGS[kind])}")
    return _BUILDERS[kind](bug_set, system_name(kind, bug_set))


def from_name(name: str) -> SystemSpec:
    """Rebuild a toy system from its encoded name, bugs included."""
    kind, bugs = parse_system_name(name)
    return build(kind, bugs)


def healthy_twin(name: str) -> SystemSpec:
    """The bug-free version of a (possibly bugged) toy system name."""
    kind, _ = parse_system_name(name)
    return build(kind)


def generate_tasks(kind: str, n: int, seed: int) -> list[tuple[str, str]]:
    """Deterministic (query, ground_truth) pairs for a system kind."""
    if kind not in KINDS:
        raise ValueError(f"unknown toy system kind {kind!r}")
    return _TASK_GENERATORS[kind](n, seed)


def domain_of(name: str) -> str:
    kind, _ = parse_system_name(name)
    return DOMAINS[kind]


def oracle_analyzer():
    """Analyzer backend for toy trajectories: proposes the bug-free twin's action.

    Given a step of a failed toy trajectory, returns what the healthy version
    of the same agent would have emitted against the recorded prefix. This is
    the scripted stand-in for an LLM analyzer, and pairs with the brute-force
    decisive search as its oracle.
    """
    from .harness import scripted_action

    def backend(t, step: int, feedback: str, ground_truth: str) -> str:
        return scripted_action(healthy_twin(t.system_name), t, step)

    return backend

