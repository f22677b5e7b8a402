"""Synthetic corpora: periodic legitimate users plus injected attack scenarios.

All randomness comes from ``random.Random`` instances seeded from the config
seed and a string tag, so a given config always yields the same files.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .events import MappingEntry, MappingTable, NormalizedEvent, write_events
from .ontology import Category, ParseError, parse_category
from .selection import ComponentDescriptor, CheckpointTable, default_checkpoints

DAY_MS = 86_400_000
HOUR_S = 3600
LEGITIMATE = "legitimate"
DEFAULT_START_MS = 1_230_768_000_000  # 2009-01-01T00:00:00Z


class ConfigError(ValueError):
    pass


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Profile:
    """A periodic session: the steps run in order, one session per period."""

    name: str
    steps: tuple[str, ...]
    period_s: int
    jitter_s: int = 0
    gap_s: int = 120
    audience: str = "user"  # user | admin | host
    fresh_identity: bool = False
    share: float = 1.0  # fraction of the audience running this profile


LOGIN_ACCOUNT = "Authentication_Activity.Login_SysAuth.Account_Success"
LOGOUT_ACCOUNT = "Authentication_Activity.Logout_SysAuth.Account_Success"

DEFAULT_PROFILES: tuple[Profile, ...] = (
    Profile("office", (
        LOGIN_ACCOUNT,
        "Authorization_Activity.Read_File.Document_Success",
        "Authorization_Activity.Write_File.Document_Success",
        LOGOUT_ACCOUNT,
    ), period_s=4 * HOUR_S, jitter_s=HOUR_S, share=0.5),
    Profile("web", (
        LOGIN_ACCOUNT,
        "Authorization_Activity.Read_WebServer.Page_Success",
        "Authorization_Activity.Read_Database.Table_Success",
        LOGOUT_ACCOUNT,
    ), period_s=3 * HOUR_S, jitter_s=HOUR_S, share=0.5),
    Profile("dev", (
        "Authentication_Activity.Login_SSH.Account_Success",
        "System_Activity.Execute_Command.Account_Success",
        "Authorization_Activity.Modify_Database.Table_Success",
        LOGOUT_ACCOUNT,
    ), period_s=6 * HOUR_S, jitter_s=2 * HOUR_S, share=0.3),
    Profile("sysadmin", (
        "Authentication_Activity.Login_SysAuth.Admin_Success",
        "Authentication_Activity.Login_SSH.Admin_Success",
        "System_Activity.Execute_Command.Admin_Success",
        "Authentication_Config.Modify_SysAuth.Account_Success",
        "Authentication_Config.Add_SysAuth.Account_Success",
        "System_Activity.Stop_Audit.N_Success",
        "System_Activity.Start_Service.N_Success",
        "System_Config.Modify_Host.Service_Success",
        "Authentication_Activity.Logout_SSH.Admin_Success",
    ), period_s=8 * HOUR_S, jitter_s=2 * HOUR_S, audience="admin"),
    Profile("netadmin", (
        "Authentication_Activity.Login_Firewall.Admin_Success",
        "System_Config.Modify_Host.Service_Success",
        "Authentication_Activity.Logout_SSH.Admin_Success",
    ), period_s=8 * HOUR_S, jitter_s=2 * HOUR_S, audience="admin"),
    Profile("monitor", (
        "System_Information.Notify_Host.CPU_Normal",
    ), period_s=HOUR_S, jitter_s=600, audience="host"),
)

# server role reached by a category, from its primary target
ROLE_BY_TARGET = {
    "SysAuth": "authserver",
    "Firewall": "firewall",
    "Router": "router",
}


def role_for(category: Category) -> str:
    return ROLE_BY_TARGET.get(category.target.primary, "server")


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    user_count: int = 120
    admin_count: int = 4
    server_count: int = 12
    days: float = 23.0
    start_ms: int = DEFAULT_START_MS
    profiles: tuple[Profile, ...] = DEFAULT_PROFILES
    noise_rate: float = 0.005
    alt_dst_rate: float = 0.2

    def validate(self) -> None:
        if self.user_count < 1 and not any(p.audience != "user" for p in self.profiles):
            raise ConfigError("no population to generate for")
        if self.server_count < 1:
            raise ConfigError("need at least one server")
        if self.days <= 0:
            raise ConfigError("duration must be positive")
        if not 0 <= self.noise_rate < 1 or not 0 <= self.alt_dst_rate <= 1:
            raise ConfigError("rates must lie in [0, 1)")
        for p in self.profiles:
            if not p.steps or p.period_s <= 0 or p.gap_s <= 0 or p.jitter_s < 0:
                raise ConfigError(f"profile {p.name}: bad timing or empty steps")
            if p.audience not in ("user", "admin", "host"):
                raise ConfigError(f"profile {p.name}: unknown audience {p.audience!r}")
            for s in p.steps:
                try:
                    parse_category(s)
                except ParseError as exc:
                    raise ConfigError(f"profile {p.name}: {exc}") from exc


def non_checkpoint_fraction(config: GeneratorConfig, table: Optional[CheckpointTable] = None) -> float:
    """Share of the profiles' distinct categories that match no checkpoint."""
    table = table or default_checkpoints()
    cats = {parse_category(s) for p in config.profiles for s in p.steps}
    return sum(1 for c in cats if not table.matching(c)) / len(cats)


# -- the simulated information system ---------------------------------------


@dataclass
class World:
    users: list[str]
    admins: list[str]
    workstation: dict[str, str]
    servers: dict[str, list[str]]
    context: dict[str, ComponentDescriptor]
    preferred: dict[tuple[str, str], tuple[str, str]] = field(default_factory=dict)

    @property
    def hosts(self) -> list[str]:
        return sorted(self.context)

    def all_servers(self) -> list[str]:
        return sorted(a for v in self.servers.values() for a in v)


def build_world(config: GeneratorConfig) -> World:
    rng = random.Random(f"{config.seed}:world")
    users = [f"user{k:03d}" for k in range(config.user_count)]
    admins = [f"admin{k:02d}" for k in range(config.admin_count)]
    context: dict[str, ComponentDescriptor] = {}
    workstation = {}
    for k, u in enumerate(users + admins):
        addr = f"10.1.{k // 250}.{k % 250 + 1}"
        workstation[u] = addr
        context[addr] = ComponentDescriptor("workstation", "LAN", 0.2, rng.random() < 0.1)
    n_auth = max(1, config.server_count // 6)
    roles = ["authserver"] * n_auth + ["firewall", "router"]
    roles += ["server"] * max(1, config.server_count - len(roles))
    servers: dict[str, list[str]] = {}
    for k, role in enumerate(roles):
        addr = f"10.0.0.{k + 1}"
        servers.setdefault(role, []).append(addr)
        if role == "authserver":
            desc = ComponentDescriptor("authserver", "LAN", 0.9, False)
        elif role == "firewall":
            desc = ComponentDescriptor("firewall", "WAN", 0.8, False)
        elif role == "router":
            desc = ComponentDescriptor("router", "WAN", 0.7, rng.random() < 0.3)
        else:
            desc = ComponentDescriptor("server", rng.choice(["LAN", "DMZ"]), 0.6, rng.random() < 0.2)
        context[addr] = desc
    world = World(users, admins, workstation, servers, context)
    for person in users + admins:
        for role, pool in sorted(servers.items()):
            main = rng.choice(pool)
            alt = rng.choice(pool)
            world.preferred[(person, role)] = (main, alt)
    return world


# -- legitimate traffic -----------------------------------------------------


@dataclass
class _Draft:
    time: int
    category: Category
    user: Optional[str]
    src: Optional[str]
    dst: Optional[str]
    tag: str


def _audience(profile: Profile, world: World, config: GeneratorConfig) -> list[str]:
    if profile.audience == "host":
        return world.all_servers()
    people = world.admins if profile.audience == "admin" else world.users
    if profile.share >= 1.0:
        return list(people)
    rng = random.Random(f"{config.seed}:share:{profile.name}")
    return [p for p in people if rng.random() < profile.share]


def _dst(world: World, person: str, cat: Category, rng: random.Random, alt_rate: float) -> Optional[str]:
    role = role_for(cat)
    main, alt = world.preferred[(person, role)]
    return alt if rng.random() < alt_rate else main


def _drafts(config: GeneratorConfig, world: World, end_ms: int) -> list[_Draft]:
    drafts: list[_Draft] = []
    duration = end_ms - config.start_ms
    noise_pool = sorted(
        {parse_category(s) for p in config.profiles if p.audience != "host" for s in p.steps}, key=str
    )
    fresh_counter = 0
    for profile in config.profiles:
        steps = [parse_category(s) for s in profile.steps]
        sessions = int(duration // (profile.period_s * 1000))
        for actor in _audience(profile, world, config):
            rng = random.Random(f"{config.seed}:{profile.name}:{actor}")
            for k in range(sessions):
                t = config.start_ms + k * profile.period_s * 1000 + rng.randint(0, profile.jitter_s * 1000)
                if profile.audience == "host":
                    user, src = None, actor
                elif profile.fresh_identity:
                    fresh_counter += 1
                    user = f"cust{fresh_counter:06d}"
                    src = f"198.51.{fresh_counter // 250 % 250}.{fresh_counter % 250 + 1}"
                else:
                    user, src = actor, world.workstation[actor]
                for n, cat in enumerate(steps):
                    if n:
                        t += rng.randint(profile.gap_s * 500, profile.gap_s * 1500)
                    if profile.audience == "host":
                        dst = None
                    elif profile.fresh_identity:
                        dst = world.servers["server"][0]
                    else:
                        dst = _dst(world, actor, cat, rng, config.alt_dst_rate)
                    drafts.append(_Draft(t, cat, user, src, dst, LEGITIMATE))
                    if profile.audience != "host" and rng.random() < config.noise_rate:
                        ncat = rng.choice(noise_pool)
                        pool = world.servers.get(role_for(ncat)) or world.all_servers()
                        drafts.append(_Draft(t + rng.randint(1000, profile.gap_s * 1000), ncat,
                                             user, src, rng.choice(pool), LEGITIMATE))
    return drafts


def _finalize(drafts: list[_Draft], prefix: str) -> tuple[list[NormalizedEvent], dict[str, str]]:
    drafts.sort(key=lambda d: (d.time, str(d.category), d.user or "", d.src or "", d.dst or ""))
    events, labels = [], {}
    for k, d in enumerate(drafts):
        eid = f"{prefix}{k:07d}"
        events.append(NormalizedEvent(
            event_id=eid, analyzer=analyzer_for(d.category), create_time=d.time,
            category=d.category, src=d.src, dst=d.dst, user=d.user,
        ))
        labels[eid] = d.tag
    return events, labels


def analyzer_for(cat: Category) -> str:
    t = cat.target.primary
    if t == "SSH":
        return "sshd"
    if t == "SysAuth":
        return "radius"
    if t in ("Firewall", "Router"):
        return "netfilter"
    if t in ("WebServer",):
        return "httpd"
    if t in ("Database",):
        return "dbaudit"
    if cat.movement.mode.value == "Information":
        return "snmp"
    return "auditd"


def generate(config: GeneratorConfig, prefix: str = "ev") -> tuple[list[NormalizedEvent], dict[str, str]]:
    """Time-ordered legitimate events over ``config.days`` plus their labels."""
    config.validate()
    world = build_world(config)
    end = config.start_ms + int(config.days * DAY_MS)
    return _finalize(_drafts(config, world, end), prefix)


def generate_split(config: GeneratorConfig, test_days: float = 1.0):
    """Training stream over ``config.days`` and the held-out days right after it."""
    config.validate()
    world = build_world(config)
    split = config.start_ms + int(config.days * DAY_MS)
    drafts = _drafts(config, world, split + int(test_days * DAY_MS))
    train = [d for d in drafts if d.time < split]
    test = [d for d in drafts if d.time >= split]
    tr_events, tr_labels = _finalize(train, "tr")
    te_events, te_labels = _finalize(test, "te")
    return world, (tr_events, tr_labels), (te_events, te_labels)


# -- attack scenarios -------------------------------------------------------


@dataclass(frozen=True)
class ScenarioSpec:
    effect: str
    variant: str
    steps: tuple[str, ...]
    replications: int = 10
    gap_s: int = 120

    @property
    def label(self) -> str:
        return f"{self.effect}.{self.variant}"

    def categories(self) -> list[Category]:
        out = []
        for s in self.steps:
            try:
                out.append(parse_category(s))
            except ParseError as exc:
                raise ScenarioError(f"{self.label}: {exc}") from exc
        return out


R2L_SC1 = ScenarioSpec("RemoteToLocal", "sc1", (
    "Authentication_Activity.Login_SysAuth.Account_Success",
    "Authentication_Config.Add_SysAuth.Account_Success",
    "Authentication_Activity.Login_SSH.Admin_Success",
    "System_Activity.Stop_Audit.N_Success",
))
R2L_SC2 = ScenarioSpec("RemoteToLocal", "sc2", (
    "Authentication_Activity.Login_SysAuth.Account_Success",
    "Authentication_Config.Modify_SysAuth.Account_Success",
    "Authentication_Activity.Login_SysAuth.Admin_Success",
    "System_Activity.Execute_Command.Admin_Success",
))
# the two sequences below are built by analogy with the R2L ones
U2R_SC1 = ScenarioSpec("UserToRoot", "sc1", (
    "Authentication_Activity.Login_SysAuth.Account_Success",
    "System_Activity.Execute_Command.Account_Success",
    "Authentication_Config.Modify_SysAuth.Account_Success",
    "System_Activity.Execute_Command.Admin_Success",
))
U2R_SC2 = ScenarioSpec("UserToRoot", "sc2", (
    "Authentication_Activity.Login_SSH.Account_Success",
    "System_Activity.Execute_Command.Account_Success",
    "System_Activity.Stop_Audit.N_Success",
))
AAD_SC1 = ScenarioSpec("AccessAlterData", "sc1", (
    "Authentication_Activity.Login_SysAuth.Account_Success",
    "Authorization_Activity.Modify_Database.Table_Success",
    "Authorization_Activity.Write_File.Document_Success",
))
AAD_SC2 = ScenarioSpec("AccessAlterData", "sc2", (
    "Authentication_Activity.Login_SSH.Account_Success",
    "Authorization_Activity.Write_File.Document_Success",
    "Authorization_Activity.Delete_File.Document_Success",
    "System_Activity.Stop_Audit.N_Success",
))
R2L_SCENARIOS = (R2L_SC1, R2L_SC2)
BUILTIN_SCENARIOS = (U2R_SC1, U2R_SC2, R2L_SC1, R2L_SC2, AAD_SC1, AAD_SC2)


def inject(
    events: Sequence[NormalizedEvent],
    labels: dict[str, str],
    scenarios: Sequence[ScenarioSpec],
    world: World,
    seed: int = 0,
) -> tuple[list[NormalizedEvent], dict[str, str]]:
    """Insert replicated scenario chains at random times inside the stream's span.

    Each replication draws a user, a source host and destination servers
    from the simulated population; every step shares that user and source,
    so consecutive steps are correlated.
    """
    if not scenarios:
        return list(events), dict(labels)
    if not events:
        raise ScenarioError("cannot place scenarios in an empty stream")
    lo = min(e.time for e in events)
    hi = max(e.time for e in events)
    out = list(events)
    out_labels = dict(labels)
    people = world.users + world.admins
    hosts = world.hosts
    for spec in scenarios:
        cats = spec.categories()
        if spec.replications < 1:
            raise ScenarioError(f"{spec.label}: replications must be >= 1")
        rng = random.Random(f"{seed}:inject:{spec.label}")
        span = (len(cats) - 1) * spec.gap_s * 1500
        for rep in range(spec.replications):
            user = rng.choice(people)
            src = rng.choice(hosts)
            t = rng.randint(lo, max(lo, hi - span))
            for k, cat in enumerate(cats):
                if k:
                    t += rng.randint(spec.gap_s * 500, spec.gap_s * 1500)
                pool = world.servers.get(role_for(cat)) or world.all_servers()
                eid = f"atk-{spec.effect}-{spec.variant}-{rep:02d}-{k}"
                out.append(NormalizedEvent(
                    event_id=eid, analyzer=analyzer_for(cat), create_time=t, category=cat,
                    src=src, dst=rng.choice(pool), user=user,
                ))
                out_labels[eid] = spec.label
    out.sort(key=NormalizedEvent.order_key)
    return out, out_labels


# -- special-purpose corpora ------------------------------------------------


def ecommerce_config(seed: int = 0, days: float = 10.0) -> GeneratorConfig:
    """Stationary staff traffic plus a shop handing a new account to each customer."""
    shop = Profile("shop", (
        LOGIN_ACCOUNT,
        "Authorization_Activity.Read_WebServer.Page_Success",
    ), period_s=HOUR_S, jitter_s=1800, audience="host", fresh_identity=True)
    return GeneratorConfig(seed=seed, user_count=30, days=days, profiles=DEFAULT_PROFILES + (shop,))


def planted_corpus(
    frequencies: Sequence[int] = (9000, 900, 90, 9, 1),
    test_per_state: int = 3,
    seed: int = 0,
    start_ms: int = DEFAULT_START_MS,
):
    """Login -> Read sessions whose Read destination follows planted counts.

    Returns (train, test, truth) where truth maps each test Read event id to
    its planted conditional probability ``count / sum(counts)``.
    """
    rng = random.Random(f"{seed}:planted")
    login = parse_category(LOGIN_ACCOUNT)
    read = parse_category("Authorization_Activity.Read_Database.Table_Success")
    total = sum(frequencies)
    dsts = [f"10.0.9.{k + 1}" for k in range(len(frequencies))]
    plan = [k for k, n in enumerate(frequencies) for _ in range(n)]
    rng.shuffle(plan)
    session_gap = 2 * HOUR_S * 1000

    def session(t: int, k: int, idx: int, prefix: str) -> list[NormalizedEvent]:
        return [
            NormalizedEvent(f"{prefix}{idx:06d}a", "radius", t, login, src="10.1.0.1", dst="10.0.0.1", user="alice"),
            NormalizedEvent(f"{prefix}{idx:06d}b", "dbaudit", t + 10_000, read, src="10.1.0.1", dst=dsts[k],
                            user="alice"),
        ]

    train = []
    t = start_ms
    for idx, k in enumerate(plan):
        train += session(t, k, idx, "p")
        t += session_gap
    test, truth = [], {}
    order = [k for k in range(len(frequencies)) for _ in range(test_per_state)]
    rng.shuffle(order)
    for idx, k in enumerate(order):
        evs = session(t, k, idx, "q")
        test += evs
        truth[evs[1].event_id] = frequencies[k] / total
        t += session_gap
    return train, test, truth


# -- file outputs -----------------------------------------------------------


def write_labels(labels: dict[str, str], events: Iterable[NormalizedEvent], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in events:
            fh.write(f"{e.event_id}\t{labels[e.event_id]}\n")


def read_labels(path: Union[str, Path]) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            eid, sep, label = line.rstrip("\n").partition("\t")
            if not sep:
                raise ValueError(f"line {lineno}: expected event_id<TAB>label")
            out[eid] = label
    return out


def raw_records(events: Iterable[NormalizedEvent]) -> tuple[list[str], MappingTable]:
    """Render events as raw analyzer records plus the table that maps them back."""
    entries: dict[tuple[str, str], MappingEntry] = {}
    sig_of: dict[Category, str] = {}
    lines = []
    attrs = (("id", 3), ("user", 4), ("src", 5), ("dst", 6))
    for e in events:
        sig = sig_of.get(e.category)
        if sig is None:
            sig = sig_of[e.category] = f"sig{len(sig_of):04d}"
        entries.setdefault((e.analyzer, sig), MappingEntry(e.category, attrs))
        lines.append("\t".join([e.analyzer, sig, str(e.create_time), e.event_id,
                                e.user or "-", e.src or "-", e.dst or "-"]))
    return lines, MappingTable(entries)


def write_corpus(events: Sequence[NormalizedEvent], labels: dict[str, str], out_dir: Union[str, Path],
                 stem: str) -> None:
    out = Path(out_dir)
    write_events(events, out / f"{stem}.jsonl")
    write_labels(labels, events, out / f"{stem}_labels.tsv")


def scaled(config: GeneratorConfig, **changes) -> GeneratorConfig:
    return replace(config, **changes)


def labeled_points(seed: int = 0, n: int = 40) -> list[tuple[tuple[float, float, float], str]]:
    """Analyst-style labelled evaluation points: low-risk normals, high-risk attacks."""
    rng = random.Random(f"{seed}:labeled")
    out = []
    for k in range(n):
        attack = k % 2 == 1
        lo, hi = (0.55, 1.0) if attack else (0.0, 0.45)
        out.append((tuple(round(rng.uniform(lo, hi), 4) for _ in range(3)), "attack" if attack else "normal"))
    return out
