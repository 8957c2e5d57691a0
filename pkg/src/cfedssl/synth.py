"""Deterministic NSL-KDD-format synthetic corpus for offline runs.

Real NSL-KDD files are not redistributable here, so this generator emits
KDDTrain+.txt / KDDTest+.txt stand-ins with the exact per-class per-split
quantities of the benchmark (train 67343/45927/11656/995/52, test
9711/7458/2421/2754/200) and its key structural properties:

* heavy class imbalance, with U2R at a combined 252 samples;
* attack subtypes as clusters in the numeric feature space, with several
  attack names appearing only in the test file (novel subtypes);
* a signature subspace (the SYN/REJ error-rate columns): clean,
  low-variance per-class patterns that make the training split easy to
  separate. Novel test subtypes evade it - their signature columns look
  like normal traffic - so models that lean on the signature shortcut miss
  them, while their broader cluster geometry stays near their class;
* stealthy remote-access subtypes (the novel R2L family, httptunnel)
  placed close to normal-traffic clusters in geometry as well, which caps
  their recall for every method;
* full coverage of the standard 70-service / 11-flag / 3-protocol
  category sets in the training split, so the encoded dimension is 122.

Cluster geometry is a fixed design (structure seed is a module constant);
the caller's seed varies only the sampled records, so different seeds
describe the same underlying traffic distribution.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import COLUMNS

STRUCTURE_SEED = 20240
N_NUMERIC = 38

# Categorical level sets (standard NSL-KDD inventories).
PROTOCOLS = ("tcp", "udp", "icmp")
SERVICES = (
    "aol", "auth", "bgp", "courier", "csnet_ns", "ctf", "daytime", "discard",
    "domain", "domain_u", "echo", "eco_i", "ecr_i", "efs", "exec", "finger",
    "ftp", "ftp_data", "gopher", "harvest", "hostnames", "http", "http_2784",
    "http_443", "http_8001", "imap4", "IRC", "iso_tsap", "klogin", "kshell",
    "ldap", "link", "login", "mtp", "name", "netbios_dgm", "netbios_ns",
    "netbios_ssn", "netstat", "nnsp", "nntp", "ntp_u", "other", "pm_dump",
    "pop_2", "pop_3", "printer", "private", "red_i", "remote_job", "rje",
    "shell", "smtp", "sql_net", "ssh", "sunrpc", "supdup", "systat", "telnet",
    "tftp_u", "tim_i", "time", "urh_i", "urp_i", "uucp", "uucp_path", "vmnet",
    "whois", "X11", "Z39_50",
)
FLAGS = ("OTH", "REJ", "RSTO", "RSTOS0", "RSTR", "S0", "S1", "S2", "S3",
         "SF", "SH")

INT_SCALE = {
    "duration": 5000, "src_bytes": 10000, "dst_bytes": 10000,
    "wrong_fragment": 3, "urgent": 3, "hot": 30, "num_failed_logins": 5,
    "num_compromised": 100, "su_attempted": 2, "num_root": 100,
    "num_file_creations": 50, "num_shells": 2, "num_access_files": 10,
    "count": 511, "srv_count": 511, "dst_host_count": 255,
    "dst_host_srv_count": 255,
}
BINARY_COLS = {"land", "logged_in", "root_shell", "is_host_login",
               "is_guest_login"}
CONST_ZERO_COLS = {"num_outbound_cmds"}
NUMERIC_COLUMNS = [c for c in COLUMNS
                   if c not in ("protocol_type", "service", "flag")]

# Signature subspace: the classic serror/rerror-rate features.
SIGNATURE_COLUMNS = (
    "serror_rate", "srv_serror_rate", "rerror_rate", "srv_rerror_rate",
    "dst_host_serror_rate", "dst_host_srv_serror_rate",
    "dst_host_rerror_rate", "dst_host_srv_rerror_rate",
)
SIGNATURE_DIMS = np.array([NUMERIC_COLUMNS.index(c) for c in SIGNATURE_COLUMNS])
SIGNATURE_STD = 0.02
STRUCTURE_STD = 0.09

# (serror pair, rerror pair, dst serror pair, dst rerror pair) per class.
CLASS_SIGNATURE = {
    "Normal": np.array([0.05, 0.05, 0.06, 0.06, 0.05, 0.05, 0.06, 0.06]),
    "DoS": np.array([0.90, 0.88, 0.10, 0.10, 0.90, 0.88, 0.12, 0.10]),
    "Probe": np.array([0.12, 0.10, 0.88, 0.90, 0.10, 0.12, 0.88, 0.90]),
    "R2L": np.array([0.30, 0.30, 0.55, 0.55, 0.30, 0.30, 0.55, 0.55]),
    "U2R": np.array([0.55, 0.55, 0.30, 0.30, 0.55, 0.55, 0.30, 0.30]),
}

ATTACK_CLASS_NAME = {
    "normal": "Normal",
    "back": "DoS", "land": "DoS", "neptune": "DoS", "pod": "DoS",
    "smurf": "DoS", "teardrop": "DoS", "apache2": "DoS", "udpstorm": "DoS",
    "processtable": "DoS", "mailbomb": "DoS", "worm": "DoS",
    "satan": "Probe", "ipsweep": "Probe", "nmap": "Probe",
    "portsweep": "Probe", "mscan": "Probe", "saint": "Probe",
    "guess_passwd": "R2L", "ftp_write": "R2L", "imap": "R2L", "phf": "R2L",
    "multihop": "R2L", "warezmaster": "R2L", "warezclient": "R2L",
    "spy": "R2L", "xlock": "R2L", "xsnoop": "R2L", "snmpguess": "R2L",
    "snmpgetattack": "R2L", "sendmail": "R2L", "named": "R2L",
    "httptunnel": "U2R", "buffer_overflow": "U2R", "loadmodule": "U2R",
    "rootkit": "U2R", "perl": "U2R", "sqlattack": "U2R", "xterm": "U2R",
    "ps": "U2R",
}

# (protocol weights, service weights, flag weights) per traffic profile.
PROFILES: dict[str, tuple[dict, dict, dict]] = {
    "web": ({"tcp": 1.0},
            {"http": 0.82, "http_443": 0.12, "http_8001": 0.06},
            {"SF": 0.90, "REJ": 0.05, "RSTO": 0.05}),
    "mail": ({"tcp": 1.0},
             {"smtp": 0.90, "imap4": 0.10},
             {"SF": 0.95, "S1": 0.05}),
    "dns": ({"udp": 1.0},
            {"domain_u": 0.85, "ntp_u": 0.10, "other": 0.05},
            {"SF": 1.0}),
    "inter": ({"tcp": 1.0},
              {"telnet": 0.50, "ftp": 0.20, "ssh": 0.20, "login": 0.10},
              {"SF": 0.85, "RSTO": 0.10, "S1": 0.05}),
    "ftp": ({"tcp": 1.0},
            {"ftp_data": 0.70, "ftp": 0.30},
            {"SF": 0.90, "RSTO": 0.10}),
    "dos_syn": ({"tcp": 1.0},
                {"private": 0.95, "other": 0.05},
                {"S0": 0.92, "REJ": 0.05, "RSTR": 0.03}),
    "dos_icmp": ({"icmp": 1.0},
                 {"ecr_i": 0.90, "eco_i": 0.10},
                 {"SF": 1.0}),
    "dos_udp": ({"udp": 1.0},
                {"private": 0.80, "other": 0.20},
                {"SF": 1.0}),
    "probe_scan": ({"tcp": 1.0},
                   {"private": 0.50, "other": 0.30, "finger": 0.10,
                    "netstat": 0.10},
                   {"REJ": 0.40, "RSTR": 0.30, "S0": 0.20, "SF": 0.10}),
    "probe_icmp": ({"icmp": 1.0},
                   {"eco_i": 0.85, "urp_i": 0.15},
                   {"SF": 1.0}),
    "r2l_login": ({"tcp": 1.0},
                  {"telnet": 0.50, "pop_3": 0.20, "ftp": 0.30},
                  {"SF": 0.60, "RSTO": 0.40}),
    "u2r": ({"tcp": 1.0},
            {"telnet": 0.80, "ftp": 0.20},
            {"SF": 1.0}),
    # Uniform over the full inventories; keeps every category in training.
    "misc": ({p: 1 / 3 for p in PROTOCOLS},
             {s: 1 / len(SERVICES) for s in SERVICES},
             {f: 1 / len(FLAGS) for f in FLAGS}),
}


@dataclass(frozen=True)
class Subtype:
    label: str
    train: int
    test: int
    anchor: str = ""         # "" = own anchor cluster
    toward: str = ""         # second endpoint for interpolation/shift
    frac: float = 0.0        # fraction of the way from anchor to toward
    delta: float = 0.0       # absolute shift along a fixed direction
    std: float = STRUCTURE_STD
    test_drift: float = 0.0
    cat: str = "misc"
    signature: str = "class"  # class | normal | lerp (evasion control)
    cover_categories: bool = False


# Cluster table. Counts per (label, split) sum to the benchmark quantities.
# signature="normal" on a test-only subtype is the evasion case: geometry
# stays near the class anchor but the signature columns mimic normal
# traffic. frac places novel clusters between their class anchor and a
# normal cluster, grading how recoverable they are from geometry alone.
SUBTYPES: tuple[Subtype, ...] = (
    # Normal: 67343 / 9711
    Subtype("normal#web", 26937, 3300, cat="web"),
    Subtype("normal#mail", 16836, 2330, cat="mail"),
    Subtype("normal#dns", 13469, 1940, cat="dns"),
    Subtype("normal#inter", 9764, 1400, cat="inter"),
    Subtype("normal#misc", 337, 0, std=0.20, cat="misc",
            cover_categories=True),
    Subtype("normal#edge", 0, 741, anchor="normal#web", toward="satan",
            frac=0.35, cat="web", signature="lerp"),
    # DoS: 45927 / 7458
    Subtype("neptune", 41214, 4657, cat="dos_syn"),
    Subtype("smurf", 2646, 665, test_drift=0.35, cat="dos_icmp"),
    Subtype("back", 956, 359, anchor="normal#web", delta=0.85, cat="web"),
    Subtype("teardrop", 892, 12, cat="dos_udp"),
    Subtype("pod", 201, 39, anchor="smurf", delta=0.50, cat="dos_icmp"),
    Subtype("land", 18, 7, anchor="neptune", delta=0.50, cat="dos_syn"),
    Subtype("apache2", 0, 737, anchor="neptune", toward="normal#web",
            frac=0.42, cat="web", signature="normal"),
    Subtype("processtable", 0, 685, anchor="neptune", toward="normal#inter",
            frac=0.48, cat="inter", signature="normal"),
    Subtype("mailbomb", 0, 293, anchor="smurf", toward="normal#mail",
            frac=0.60, cat="mail", signature="normal"),
    Subtype("udpstorm", 0, 2, anchor="teardrop", toward="normal#dns",
            frac=0.40, cat="dos_udp", signature="normal"),
    Subtype("worm", 0, 2, anchor="smurf", toward="normal#mail",
            frac=0.75, cat="mail", signature="normal"),
    # Probe: 11656 / 2421
    Subtype("satan", 3633, 735, cat="probe_scan"),
    Subtype("ipsweep", 3599, 141, cat="probe_icmp"),
    Subtype("portsweep", 2931, 157, cat="probe_scan"),
    Subtype("nmap", 1493, 73, anchor="satan", delta=0.45, cat="probe_scan"),
    Subtype("mscan", 0, 996, anchor="satan", toward="normal#web",
            frac=0.40, cat="web", signature="normal"),
    Subtype("saint", 0, 319, anchor="portsweep", toward="normal#inter",
            frac=0.55, cat="inter", signature="normal"),
    # R2L: 995 / 2754
    Subtype("warezclient", 890, 0, cat="ftp"),
    Subtype("guess_passwd", 53, 830, std=0.04, cat="r2l_login"),
    Subtype("warezmaster", 20, 60, cat="ftp"),
    Subtype("ftp_write", 8, 4, anchor="warezclient", delta=0.40, cat="ftp"),
    Subtype("imap", 11, 3, cat="mail"),
    Subtype("multihop", 7, 10, anchor="guess_passwd", delta=0.50, cat="inter"),
    Subtype("phf", 4, 3, anchor="normal#web", delta=0.80, cat="web"),
    Subtype("spy", 2, 0, anchor="guess_passwd", delta=0.60, cat="inter"),
    Subtype("snmpgetattack", 0, 700, anchor="normal#dns", delta=0.20,
            cat="dns", signature="normal"),
    Subtype("snmpguess", 0, 500, anchor="normal#dns", delta=0.28,
            cat="dns", signature="normal"),
    Subtype("sendmail", 0, 300, anchor="normal#mail", delta=0.26,
            cat="mail", signature="normal"),
    Subtype("named", 0, 200, anchor="normal#dns", delta=0.33,
            cat="dns", signature="normal"),
    Subtype("xlock", 0, 90, anchor="normal#inter", delta=0.30,
            cat="inter", signature="normal"),
    Subtype("xsnoop", 0, 54, anchor="normal#inter", delta=0.25,
            cat="inter", signature="normal"),
    # U2R: 52 / 200
    Subtype("buffer_overflow", 30, 20, std=0.04, cat="u2r"),
    Subtype("rootkit", 10, 13, anchor="buffer_overflow", delta=0.45,
            cat="u2r"),
    Subtype("loadmodule", 9, 2, anchor="buffer_overflow", delta=0.40,
            cat="u2r"),
    Subtype("perl", 3, 2, anchor="buffer_overflow", delta=0.35, cat="u2r"),
    Subtype("ps", 0, 15, anchor="buffer_overflow", toward="normal#inter",
            frac=0.45, cat="u2r", signature="normal"),
    Subtype("xterm", 0, 13, anchor="buffer_overflow", toward="normal#inter",
            frac=0.60, cat="u2r", signature="normal"),
    Subtype("sqlattack", 0, 2, anchor="normal#web", delta=0.90, cat="web",
            signature="normal"),
    Subtype("httptunnel", 0, 133, anchor="normal#web", delta=0.24,
            cat="web", signature="normal"),
)

TRAIN_TOTAL = sum(s.train for s in SUBTYPES)   # 125973
TEST_TOTAL = sum(s.test for s in SUBTYPES)     # 22544


def _attack_name(label: str) -> str:
    return label.split("#")[0]


def _apply_signature(mean: np.ndarray, sub: Subtype,
                     lerped: np.ndarray | None) -> np.ndarray:
    out = mean.copy()
    if sub.signature == "class":
        out[SIGNATURE_DIMS] = CLASS_SIGNATURE[ATTACK_CLASS_NAME[_attack_name(sub.label)]]
    elif sub.signature == "normal":
        out[SIGNATURE_DIMS] = CLASS_SIGNATURE["Normal"]
    elif sub.signature == "lerp" and lerped is not None:
        out[SIGNATURE_DIMS] = lerped
    return out


def _cluster_means() -> dict[str, np.ndarray]:
    """Fixed cluster geometry: anchors well separated; shifted subtypes at a
    configured distance or interpolation fraction; signature columns set
    last per the subtype's evasion mode."""
    rng = np.random.default_rng(STRUCTURE_SEED)
    means: dict[str, np.ndarray] = {}
    anchors: list[np.ndarray] = []
    for sub in SUBTYPES:
        if sub.anchor:
            continue
        for _ in range(1000):
            cand = rng.uniform(0.12, 0.88, size=N_NUMERIC)
            if all(np.linalg.norm(cand - a) >= 0.9 for a in anchors):
                break
        anchors.append(cand)
        means[sub.label] = _apply_signature(cand, sub, None)
    for sub in SUBTYPES:
        if not sub.anchor:
            continue
        base = means[sub.anchor]
        if sub.toward and sub.frac > 0:
            mean = (1 - sub.frac) * base + sub.frac * means[sub.toward]
        else:
            if sub.toward:
                direction = means[sub.toward] - base
            else:
                direction = rng.standard_normal(N_NUMERIC)
            direction = direction / np.linalg.norm(direction)
            mean = np.clip(base + sub.delta * direction, 0.0, 1.0)
        means[sub.label] = _apply_signature(mean, sub, mean[SIGNATURE_DIMS])
    return means


def _drift_directions() -> dict[str, np.ndarray]:
    rng = np.random.default_rng(STRUCTURE_SEED + 1)
    out = {}
    for sub in SUBTYPES:
        if sub.test_drift > 0:
            d = rng.standard_normal(N_NUMERIC)
            d[SIGNATURE_DIMS] = 0.0   # drift never breaks a kept signature
            out[sub.label] = d / np.linalg.norm(d)
    return out


def _weighted_choice(rng: np.random.Generator, weights: dict, n: int) -> list[str]:
    names = list(weights)
    p = np.array([weights[k] for k in names], dtype=np.float64)
    p = p / p.sum()
    return [names[i] for i in rng.choice(len(names), size=n, p=p)]


def _format_rows(sub: Subtype, n: int, mean: np.ndarray, drift: np.ndarray | None,
                 rng: np.random.Generator) -> list[str]:
    center = mean if drift is None else np.clip(mean + drift, 0.0, 1.0)
    std = np.full(N_NUMERIC, sub.std)
    std[SIGNATURE_DIMS] = SIGNATURE_STD
    v = np.clip(center + std * rng.standard_normal((n, N_NUMERIC)), 0.0, 1.0)
    protocol_w, service_w, flag_w = PROFILES[sub.cat]
    protocols = _weighted_choice(rng, protocol_w, n)
    services = _weighted_choice(rng, service_w, n)
    flags = _weighted_choice(rng, flag_w, n)
    if sub.cover_categories:
        # guarantees the full inventories appear in training, keeping the
        # encoded dimension fixed at 38 + 3 + 70 + 11
        services[:len(SERVICES)] = list(SERVICES)[:n]
        flags[:len(FLAGS)] = list(FLAGS)[:n]
        protocols[:len(PROTOCOLS)] = list(PROTOCOLS)[:n]
    difficulty = rng.integers(1, 22, size=n)
    label = _attack_name(sub.label)

    columns: dict[str, list[str]] = {}
    for j, name in enumerate(NUMERIC_COLUMNS):
        col = v[:, j]
        if name in CONST_ZERO_COLS:
            columns[name] = ["0"] * n
        elif name in BINARY_COLS:
            columns[name] = np.where(col > 0.5, "1", "0").tolist()
        elif name in INT_SCALE:
            scale = INT_SCALE[name]
            columns[name] = np.rint(col * scale).astype(np.int64).astype(str).tolist()
        else:  # *_rate columns, two decimals like the benchmark files
            columns[name] = [f"{x:.2f}" for x in col]
    columns["protocol_type"] = protocols
    columns["service"] = services
    columns["flag"] = flags

    rows = []
    for i in range(n):
        fields = [columns[name][i] for name in COLUMNS]
        fields.append(label)
        fields.append(str(difficulty[i]))
        rows.append(",".join(fields))
    return rows


def generate(out_dir: str | Path, seed: int = 0) -> tuple[Path, Path]:
    """Write KDDTrain+.txt / KDDTest+.txt stand-ins; deterministic per seed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    means = _cluster_means()
    drifts = _drift_directions()
    rng = np.random.default_rng(seed)

    files = {}
    for split in ("train", "test"):
        rows: list[str] = []
        for sub in SUBTYPES:
            n = sub.train if split == "train" else sub.test
            if n == 0:
                continue
            drift = None
            if split == "test" and sub.test_drift > 0:
                drift = sub.test_drift * drifts[sub.label]
            rows.extend(_format_rows(sub, n, means[sub.label], drift, rng))
        order = rng.permutation(len(rows))
        name = "KDDTrain+.txt" if split == "train" else "KDDTest+.txt"
        path = out / name
        with open(path, "w") as fh:
            fh.write("\n".join(rows[i] for i in order))
            fh.write("\n")
        files[split] = path
    return files["train"], files["test"]
