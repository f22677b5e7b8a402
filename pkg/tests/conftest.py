"""Shared hypothesis strategies and small event builders."""

from __future__ import annotations

import os

from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from isanalytics.events import NormalizedEvent
from isanalytics.ontology import (
    GAINS_BY_MODE,
    Category,
    Intention,
    MovementMode,
    default_vocabulary,
    make_category,
)

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=300, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

VOCAB = default_vocabulary()


@st.composite
def categories(draw) -> Category:
    intention = draw(st.sampled_from(list(Intention)))
    mode = draw(st.sampled_from([m for m in MovementMode if VOCAB.natures_for(m)]))
    nature = draw(st.sampled_from(VOCAB.natures_for(mode)))
    t1 = draw(st.sampled_from(VOCAB.target_tokens("primary")))
    if intention is Intention.RECON:
        t2 = None
    else:
        t2 = draw(st.one_of(st.none(), st.sampled_from(VOCAB.target_tokens("secondary"))))
    gain = draw(st.sampled_from(sorted(GAINS_BY_MODE[mode], key=lambda g: g.value)))
    return make_category(intention, mode, nature, t1, t2, gain)


def cat(s: str) -> Category:
    from isanalytics.ontology import parse_category

    return parse_category(s)


A = cat("Authentication_Activity.Login_SysAuth.Account_Success")
B = cat("System_Activity.Execute_Command.Account_Success")
C = cat("Authorization_Activity.Read_File.Document_Success")
D = cat("Authentication_Activity.Logout_SysAuth.Account_Success")
SMALL_CATS = [
    A, B, C, D,
    cat("Authorization_Activity.Write_File.Document_Success"),
    cat("Authentication_Config.Add_SysAuth.Account_Success"),
    cat("System_Activity.Stop_Audit.N_Success"),
    cat("Authentication_Activity.Login_SSH.Admin_Success"),
    cat("System_Activity.Start_Service.N_Success"),
    cat("Authorization_Activity.Read_Database.Table_Success"),
]


def ev(eid, t, category, user=None, src=None, dst=None, detect=None) -> NormalizedEvent:
    return NormalizedEvent(eid, "test", t, category, detect_time=detect, src=src, dst=dst, user=user)


@st.composite
def traces(draw, max_events=60, max_cats=6, users=("u1", "u2", "u3"), hosts=("h1", "h2", "h3"),
           max_gap_ms=20 * 60_000):
    """Random small event traces over a few users, hosts and categories."""
    ncat = draw(st.integers(1, max_cats))
    cats = SMALL_CATS[:ncat]
    n = draw(st.integers(1, max_events))
    t = 0
    out = []
    for k in range(n):
        t += draw(st.integers(0, max_gap_ms))
        user = draw(st.one_of(st.none(), st.sampled_from(users)))
        src = draw(st.sampled_from(hosts)) if user is None else draw(st.one_of(st.none(), st.sampled_from(hosts)))
        dst = draw(st.one_of(st.none(), st.sampled_from(hosts)))
        out.append(ev(f"e{k:04d}", t, draw(st.sampled_from(cats)), user, src, dst))
    return out
