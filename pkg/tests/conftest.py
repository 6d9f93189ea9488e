import numpy as np
import pytest

from speechattr.corpus import DatasetManifest, LabelSpace, SegmentRecord
from speechattr.embedstore import SynthConfig, synth_generate


def make_records(
    dataset_id,
    n_speakers,
    segments_per_speaker=1,
    n_test_speakers=0,
    ages=None,
    genders=None,
    native_languages=None,
    countries=None,
    educations=None,
    durations=None,
):
    """Build a simple manifest: speakers s000.. with per-speaker attributes."""
    records = []
    for s in range(n_speakers):
        speaker = f"{dataset_id}_s{s:04d}"
        split = "test" if s >= n_speakers - n_test_speakers else "dev"
        for k in range(segments_per_speaker):
            records.append(SegmentRecord(
                dataset_id=dataset_id,
                speaker_id=speaker,
                segment_id=f"{dataset_id}/{speaker}/seg{k}",
                split=split,
                age=None if ages is None else ages[s],
                gender=None if genders is None else genders[s],
                native_language=None if native_languages is None else native_languages[s],
                country=None if countries is None else countries[s],
                education=None if educations is None else educations[s],
                duration_s=None if durations is None else durations[s],
            ))
    return DatasetManifest(dataset_id=dataset_id, records=tuple(records))


def table1_manifests():
    """Five small manifests with the real corpora's attribute availability."""
    rng = np.random.default_rng(7)
    languages = ["arabic", "hindi", "korean", "mandarin", "spanish", "vietnamese"]
    countries = ["usa", "india", "france", "brazil"]
    edus = ["BS", "HS", "MS", "PHD", "AS"]
    n = 12
    ages = list(rng.uniform(18, 80, n))
    genders = ["female" if i % 2 else "male" for i in range(n)]
    return [
        make_records("saa", n, 1, 3, ages=ages, genders=genders,
                     native_languages=[languages[i % 6] for i in range(n)],
                     countries=[countries[i % 4] for i in range(n)]),
        make_records("timit", n, 2, 3, ages=ages, genders=genders,
                     educations=[edus[i % 5] for i in range(n)]),
        make_records("voxceleb2", n, 2, 3, ages=ages, genders=genders),
        make_records("l2arctic", n, 2, 3, genders=genders,
                     native_languages=[languages[i % 6] for i in range(n)]),
        make_records("common_voice", n, 2, 3, genders=genders,
                     countries=[countries[i % 4] for i in range(n)]),
    ]


@pytest.fixture(scope="session")
def five_manifests():
    return table1_manifests()


def synthetic_gender_age_manifest(n_speakers=200, segments_per_speaker=10, n_test=40, seed=123):
    rng = np.random.default_rng(seed)
    ages = list(rng.uniform(20, 70, n_speakers))
    genders = ["female" if s % 2 else "male" for s in range(n_speakers)]
    return make_records(
        "synth", n_speakers, segments_per_speaker, n_test, ages=ages, genders=genders
    )


@pytest.fixture(scope="session")
def synth_setup(tmp_path_factory):
    """The desk-scale synthetic benchmark: manifest + store (D=32, s=2, sigma=1)."""
    manifest = synthetic_gender_age_manifest()
    cfg = SynthConfig(dim=32, separation=2.0, noise_sigma=1.0, seed=42)
    spaces = {"gender": LabelSpace("gender", ("female", "male"))}
    path = tmp_path_factory.mktemp("synth") / "store.embs"
    store = synth_generate(manifest, spaces, cfg, path)
    return manifest, store, cfg


# --- finite-difference gradient checking (shared with the acceptance suite) --

import torch

from speechattr.heads import gradient


def finite_difference_check(model, batch, targets, loss_fn, n_coords=200, h=1e-5, seed=0):
    """Max relative error between autograd and central differences.

    The model must be in float64. A random subset of parameter coordinates is
    checked; coordinates where both gradients are ~0 are skipped, as are
    coordinates where the loss is locally nonsmooth (a ReLU kink within the
    step): there the estimates at step h and h/2 disagree with each other,
    while a wrong analytic gradient would leave them mutually consistent.
    """
    analytic = gradient(model, batch, targets, loss_fn)

    def loss_value():
        model.train(True)
        if model.task.input_kind == "sequence":
            x, lengths = batch
            out = model(x, lengths)
        else:
            out = model(batch)
        return float(loss_fn(out, targets).detach())

    rng = np.random.default_rng(seed)
    names = list(analytic)
    params = dict(model.named_parameters())
    sizes = np.array([params[n].numel() for n in names])
    total = int(sizes.sum())
    coords = rng.choice(total, size=min(n_coords, total), replace=False)
    offsets = np.cumsum(sizes)
    max_rel = 0.0
    for c in sorted(coords):
        idx = int(np.searchsorted(offsets, c, side="right"))
        local = int(c - (offsets[idx - 1] if idx else 0))
        p = params[names[idx]]
        flat = p.data.view(-1)
        orig = float(flat[local])

        def central(step):
            flat[local] = orig + step
            up = loss_value()
            flat[local] = orig - step
            down = loss_value()
            flat[local] = orig
            return (up - down) / (2 * step)

        fd = central(h)
        fd_half = central(h / 2)
        # A kink inside the step makes the two estimates disagree by O(1);
        # central differences are invalid there. A wrong analytic gradient
        # at a smooth coordinate leaves them mutually consistent and still
        # fails the comparison below.
        if abs(fd - fd_half) / max(abs(fd), abs(fd_half), 1e-10) > 1e-3:
            continue
        # Richardson extrapolation removes the h^2 truncation term, which is
        # significant in high-curvature batch-norm regions.
        fd_rich = (4 * fd_half - fd) / 3
        an = float(analytic[names[idx]].view(-1)[local])
        scale = max(abs(fd_rich), abs(an))
        # The loss is O(1), so the quotient carries ~1e-10 of absolute
        # float64 cancellation noise (eps * |loss| / h); coordinates with
        # gradients below 1e-6 are noise-dominated — treat as zero.
        if scale < 1e-6:
            continue
        max_rel = max(max_rel, abs(fd_rich - an) / scale)
    return max_rel
