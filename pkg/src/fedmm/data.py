"""Synthetic multimodal data, feature-CSV ingestion, splitting, scaling.

The generator is a linear-Gaussian latent model: a sample's latent z is
drawn from N(mu_class, I), and each modality observes A_k z + noise with
a fixed seeded mixing matrix A_k shared by every hospital. Hospitals
holding several modalities generate all views from the same z, so the
modalities are complementary views of one label-bearing latent.

Feature CSVs carry one row per (sample, modality):
    sample_id,label,modality,f0..f{d-1}
with floats printed at 17 significant digits so files round-trip exactly.
"""

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ParseError
from .seeding import derive_rng, derive_seed

FLOAT_FMT = "%.17g"


def modality_letter(k: int) -> str:
    """Modality display names: 0 -> A, 1 -> B, ..."""
    if not 0 <= k < 26:
        raise ConfigError(f"modality index {k} out of range")
    return chr(ord("A") + k)


def modality_index(letter: str) -> int:
    s = str(letter).strip().upper()
    if len(s) == 1 and "A" <= s <= "Z":
        return ord(s) - ord("A")
    if s.isdigit():
        return int(s)
    raise ConfigError(f"cannot parse modality '{letter}'")


def fmt_float(x) -> str:
    return FLOAT_FMT % float(x)


@dataclass
class HospitalSpec:
    modalities: tuple
    class_counts: tuple  # (n_class0, n_class1)


@dataclass
class SyntheticSpec:
    latent_dim: int
    observed_dims: dict  # modality -> input width
    class_separation: float
    noise_sigma: float
    hospitals: list  # of HospitalSpec
    mixing_seeds: dict | None = None  # modality -> seed; default derived

    def validate(self):
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")
        if self.class_separation < 0:
            raise ConfigError("class_separation must be >= 0")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if not self.hospitals:
            raise ConfigError("at least one hospital is required")
        for h in self.hospitals:
            if not h.modalities:
                raise ConfigError("every hospital needs a non-empty modality mask")
            if any(c < 0 for c in h.class_counts):
                raise ConfigError("class counts must be >= 0")
            for k in h.modalities:
                if k not in self.observed_dims:
                    raise ConfigError(
                        f"modality {modality_letter(k)} has no observed_dim"
                    )


@dataclass
class HospitalDataset:
    """One client's sample table: per-modality feature matrices aligned by
    sample id, binary labels, and the hospital's modality mask."""

    hospital_id: int
    sample_ids: list
    labels: np.ndarray
    features: dict  # modality -> [n, d_k]
    modality_mask: tuple

    def __post_init__(self):
        n = len(self.sample_ids)
        if len(self.labels) != n:
            raise DataError(f"hospital {self.hospital_id}: {len(self.labels)} labels for {n} ids")
        if not self.modality_mask:
            raise DataError(f"hospital {self.hospital_id}: empty modality mask")
        if set(self.features) != set(self.modality_mask):
            raise DataError(
                f"hospital {self.hospital_id}: features {sorted(self.features)} "
                f"!= mask {sorted(self.modality_mask)}"
            )
        for k, mat in self.features.items():
            if mat.shape[0] != n:
                raise DataError(
                    f"hospital {self.hospital_id} modality {modality_letter(k)}: "
                    f"{mat.shape[0]} rows for {n} ids"
                )

    @property
    def n(self) -> int:
        return len(self.sample_ids)

    def take(self, idx) -> "HospitalDataset":
        return HospitalDataset(
            self.hospital_id,
            [self.sample_ids[i] for i in idx],
            self.labels[idx].copy(),
            {k: m[idx].copy() for k, m in self.features.items()},
            self.modality_mask,
        )


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float
    seed: int

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(
                f"train_fraction must be in (0, 1), got {self.train_fraction}"
            )


def mixing_matrix(spec: SyntheticSpec, modality: int, base_seed: int) -> np.ndarray:
    seeds = spec.mixing_seeds or {}
    seed = seeds.get(modality, derive_seed(base_seed, "mixing", modality))
    rng = np.random.default_rng(seed)
    d = spec.observed_dims[modality]
    return rng.normal(0.0, 1.0, size=(d, spec.latent_dim)) / np.sqrt(spec.latent_dim)


def generate_synthetic(spec: SyntheticSpec, seed: int, return_latents: bool = False):
    """Generate one HospitalDataset per hospital, deterministically.

    Draw order is canonical: hospitals ascending, class 0 then 1, the
    latent block first, then per-modality noise in ascending modality
    order. return_latents additionally exposes the latent draws keyed by
    hospital id (the audit hook for cross-modality checks).
    """
    spec.validate()
    direction = np.ones(spec.latent_dim) / np.sqrt(spec.latent_dim)
    mu = {
        0: -0.5 * spec.class_separation * direction,
        1: +0.5 * spec.class_separation * direction,
    }
    mix = {k: mixing_matrix(spec, k, seed) for k in sorted(spec.observed_dims)}
    rng = derive_rng(seed, "synthetic")
    datasets, latents = [], {}
    for hid, hosp in enumerate(spec.hospitals, start=1):
        blocks, label_blocks, z_blocks = [], [], []
        for c in (0, 1):
            n = hosp.class_counts[c]
            z = mu[c] + rng.normal(0.0, 1.0, size=(n, spec.latent_dim))
            views = {}
            for k in sorted(hosp.modalities):
                noise = rng.normal(0.0, spec.noise_sigma, size=(n, spec.observed_dims[k]))
                views[k] = z @ mix[k].T + noise
            blocks.append(views)
            label_blocks.append(np.full(n, c, dtype=np.int64))
            z_blocks.append(z)
        labels = np.concatenate(label_blocks)
        feats = {
            k: np.concatenate([blocks[0][k], blocks[1][k]])
            for k in sorted(hosp.modalities)
        }
        ids = [f"h{hid}-s{i:05d}" for i in range(len(labels))]
        datasets.append(HospitalDataset(hid, ids, labels, feats, tuple(sorted(hosp.modalities))))
        latents[hid] = np.concatenate(z_blocks)
    if return_latents:
        return datasets, latents
    return datasets


def feature_csv_name(hospital_id: int, modality: int) -> str:
    return f"h{hospital_id}_{modality_letter(modality)}.csv"


def write_feature_csv(dataset: HospitalDataset, modality: int, path: str):
    mat = dataset.features[modality]
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(
            ["sample_id", "label", "modality"] + [f"f{i}" for i in range(mat.shape[1])]
        )
        for sid, label, row in zip(dataset.sample_ids, dataset.labels, mat):
            w.writerow([sid, int(label), modality_letter(modality)] + [fmt_float(v) for v in row])


def write_hospital_csvs(datasets, out_dir: str) -> dict:
    """One CSV per (hospital, modality); returns {(hid, k): filename}."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for ds in datasets:
        for k in ds.modality_mask:
            name = feature_csv_name(ds.hospital_id, k)
            write_feature_csv(ds, k, os.path.join(out_dir, name))
            paths[(ds.hospital_id, k)] = name
    return paths


def _read_feature_csv(path: str, modality: int, expected_dim: int | None):
    ids, labels, rows = [], [], []
    seen = set()
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or header[:3] != ["sample_id", "label", "modality"]:
            raise ParseError(f"{path}:1: expected header sample_id,label,modality,f0..")
        dim = len(header) - 3
        if expected_dim is not None and dim != expected_dim:
            raise ParseError(
                f"{path}:1: {dim} feature columns, declared width is {expected_dim}"
            )
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(
                    f"{path}:{lineno}: {len(row)} columns, header has {len(header)}"
                )
            sid, label_s, mod_s = row[0], row[1], row[2]
            if sid in seen:
                raise ParseError(f"{path}:{lineno}: duplicated sample_id '{sid}'")
            seen.add(sid)
            if modality_index(mod_s) != modality:
                raise ParseError(
                    f"{path}:{lineno}: modality '{mod_s}' does not match declared "
                    f"{modality_letter(modality)}"
                )
            try:
                label = int(label_s)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-integer label '{label_s}'") from None
            if label not in (0, 1):
                raise DataError(f"{path}:{lineno}: label {label} outside {{0,1}}")
            try:
                values = [float(v) for v in row[3:]]
            except ValueError as e:
                raise ParseError(f"{path}:{lineno}: {e}") from None
            ids.append(sid)
            labels.append(label)
            rows.append(values)
    return ids, np.asarray(labels, dtype=np.int64), np.asarray(rows, dtype=np.float64)


def load_feature_csvs(paths: dict, hospital_id: int, observed_dims: dict | None = None) -> HospitalDataset:
    """Join one hospital's per-modality CSVs on sample_id.

    paths maps modality -> file path. Every declared modality must cover
    exactly the same sample ids (heterogeneity is declared per hospital,
    not per sample); labels must agree across files. Row order follows
    the lowest-numbered modality's file.
    """
    if not paths:
        raise DataError(f"hospital {hospital_id}: no modality files declared")
    mods = sorted(paths)
    base_ids = None
    base_labels = None
    features = {}
    for k in mods:
        expected = observed_dims.get(k) if observed_dims else None
        ids, labels, mat = _read_feature_csv(paths[k], k, expected)
        if base_ids is None:
            base_ids, base_labels, features[k] = ids, labels, mat
            continue
        if set(ids) != set(base_ids):
            missing = sorted(set(base_ids) ^ set(ids))[:3]
            raise DataError(
                f"hospital {hospital_id}: modality {modality_letter(k)} covers a "
                f"different sample set (e.g. {missing})"
            )
        order = {sid: i for i, sid in enumerate(ids)}
        perm = [order[sid] for sid in base_ids]
        if not np.array_equal(labels[perm], base_labels):
            raise DataError(
                f"hospital {hospital_id}: labels disagree across modality files"
            )
        features[k] = mat[perm]
    return HospitalDataset(hospital_id, base_ids, base_labels, features, tuple(mods))


def train_test_split(data: HospitalDataset, split: SplitSpec):
    """Stratified split: per class, floor(fraction*n) to train, rest to
    test, after a seeded shuffle. Returns (train, test)."""
    rng = np.random.default_rng(split.seed)
    train_idx, test_idx = [], []
    for c in (0, 1):
        idx = np.flatnonzero(data.labels == c)
        if len(idx) < 2:
            raise DataError(
                f"hospital {data.hospital_id}: class {c} has {len(idx)} samples, "
                "need at least 2 to split"
            )
        perm = idx[rng.permutation(len(idx))]
        n_train = int(np.floor(split.train_fraction * len(idx)))
        train_idx.extend(perm[:n_train].tolist())
        test_idx.extend(perm[n_train:].tolist())
    train_idx.sort()
    test_idx.sort()
    return data.take(np.asarray(train_idx)), data.take(np.asarray(test_idx))


def standardize(train: HospitalDataset, test: HospitalDataset):
    """Per-modality, per-feature z-score fitted on the train split only.

    Features whose train std is below 1e-12 are centered but not scaled.
    Returns (train', test', {modality: (mean, std_used)}).
    """
    if train.n == 0:
        raise DataError("cannot standardize an empty train split")
    stats = {}
    new_train, new_test = {}, {}
    for k in sorted(train.features):
        mat = train.features[k]
        mean = mat.mean(axis=0)
        std = mat.std(axis=0)
        scale = np.where(std < 1e-12, 1.0, std)
        stats[k] = (mean, scale)
        new_train[k] = (mat - mean) / scale
        new_test[k] = (test.features[k] - mean) / scale
    t1 = HospitalDataset(train.hospital_id, train.sample_ids, train.labels, new_train, train.modality_mask)
    t2 = HospitalDataset(test.hospital_id, test.sample_ids, test.labels, new_test, test.modality_mask)
    return t1, t2, stats


def zero_filled_view(data: HospitalDataset, all_modalities, observed_dims) -> HospitalDataset:
    """Dataset view holding every global modality, with zero matrices in
    place of the ones this hospital lacks (input-layer fill for the
    unified-model baseline). Present features and labels are shared, not
    copied."""
    feats = {}
    for k in sorted(all_modalities):
        if k in data.features:
            feats[k] = data.features[k]
        else:
            feats[k] = np.zeros((data.n, observed_dims[k]))
    return HospitalDataset(
        data.hospital_id, data.sample_ids, data.labels, feats, tuple(sorted(all_modalities))
    )


def write_generation_manifest(out_dir, spec: SyntheticSpec, seed: int, files: dict):
    manifest = {
        "seed": seed,
        "spec": {
            "latent_dim": spec.latent_dim,
            "observed_dims": {modality_letter(k): d for k, d in sorted(spec.observed_dims.items())},
            "class_separation": spec.class_separation,
            "noise_sigma": spec.noise_sigma,
            "hospitals": [
                {
                    "modalities": [modality_letter(k) for k in h.modalities],
                    "class_counts": list(h.class_counts),
                }
                for h in spec.hospitals
            ],
        },
        "files": {f"h{hid}:{modality_letter(k)}": name for (hid, k), name in sorted(files.items())},
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path
