"""Command-line entry point for the full pipeline.

Subcommands mirror the pipeline stages: grid, prototypes, annotate-sim,
train, infer, eval, fuse, curve, serve, export-features-spec, plus synth
for generating the desk-scale benchmark. Report-producing commands write
CSV plus a rendered figure; identical inputs and seeds give byte-identical
CSV output.
"""

import hashlib
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import classifier, evaluation, pipeline, prototypes as proto_mod, report
from .dataset import GSFV_VERSION, save_mask
from .guidance import (BoxfillBackend, ExternalBackend, Variant,
                       DEFAULT_CONFIDENCE_THRESHOLD, predict_part_mask)
from .patchgrid import DEFAULT_DIVISOR, DEFAULT_OVERLAP
from .synthetic import SyntheticBenchmark

EXIT_USAGE = 2


def _workspace(manifest, divisor=DEFAULT_DIVISOR, overlap=DEFAULT_OVERLAP):
    try:
        return pipeline.Workspace(manifest, divisor, overlap)
    except Exception as exc:
        raise click.ClickException(str(exc))


def _parse_variant(name):
    try:
        return Variant(name)
    except ValueError:
        click.echo(f"unknown variant {name!r}; choose from "
                   f"{', '.join(v.value for v in Variant)}", err=True)
        sys.exit(EXIT_USAGE)


def _backend(workspace, name):
    if name == "oracle":
        return workspace.oracle_backend()
    if name == "boxfill":
        return BoxfillBackend()
    if name.startswith("http://") or name.startswith("https://"):
        return ExternalBackend(url=name)
    return ExternalBackend(command=name.split())


def _config_hash(params):
    digest = hashlib.sha256(
        json.dumps(params, sort_keys=True).encode()).hexdigest()
    return digest[:16]


def _write_meta(out_path, seed, params):
    meta = {"seed": seed, "config_hash": _config_hash(params),
            "config": params}
    with open(str(out_path) + ".meta.json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)


@click.group()
def main():
    """Label-efficient part segmentation guidance toolkit."""


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--divisor", default=DEFAULT_DIVISOR, show_default=True)
@click.option("--overlap", default=DEFAULT_OVERLAP, show_default=True)
@click.option("--out", required=True, type=click.Path())
def grid(manifest, divisor, overlap, out):
    """Emit patch grid geometry for all images."""
    ws = _workspace(manifest, divisor, overlap)
    payload = {}
    for image_id in ws.image_ids:
        g = ws.grid(image_id)
        payload[image_id] = {
            "patch_size": g.patch_size, "stride": g.stride,
            "degenerate": g.degenerate,
            "patches": [{"index": p.index, "box": list(p.box)}
                        for p in g.patches]}
    with open(out, "w") as f:
        json.dump({"divisor": divisor, "overlap": overlap,
                   "grids": payload}, f)
    click.echo(f"wrote grids for {len(payload)} images to {out}")


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--k", default=proto_mod.DEFAULT_K, show_default=True)
@click.option("--seed", default=7, show_default=True)
@click.option("--out", required=True, type=click.Path())
def prototypes(manifest, k, seed, out):
    """Cluster patch features into prototypes and score them per part."""
    ws = _workspace(manifest)
    protos = proto_mod.cluster_prototypes(ws.features, k, seed)
    proto_mod.score_prototypes(protos, ws.scores, ws.part_classes)
    proto_mod.save_prototypes(protos, out)
    _write_meta(out, seed, {"k": k, "manifest": str(manifest)})
    click.echo(f"wrote {len(protos)} prototypes to {out}")


@main.command("annotate-sim")
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--prototypes", "prototypes_path", required=True,
              type=click.Path(exists=True))
@click.option("--part", default=None, help="one part class; default all")
@click.option("--out", required=True, type=click.Path())
def annotate_sim(manifest, prototypes_path, part, out):
    """Simulate bulk-click annotation of every prototype from ground truth."""
    ws = _workspace(manifest)
    protos = proto_mod.load_prototypes(prototypes_path)
    parts = [part] if part else ws.part_classes
    records = []
    for part_class in parts:
        if part_class not in ws.part_classes:
            raise click.ClickException(f"unknown part class {part_class!r}")
        truth = pipeline.patch_ground_truth(ws, part_class)
        for proto in protos:
            records.append(proto_mod.simulate_annotation(proto, truth,
                                                         part_class))
    proto_mod.save_records(records, out)
    clicks = sum(r.clicks for r in records)
    click.echo(f"appended {len(records)} records ({clicks} clicks) to {out}")


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--part", required=True)
@click.option("--images", default=64, show_default=True,
              help="number of training images to sample")
@click.option("--seed", default=7, show_default=True)
@click.option("--svm-c", "c_value", default=1.0, show_default=True)
@click.option("--gamma", default="auto", show_default=True)
@click.option("--records", "records_path", default=None,
              type=click.Path(exists=True),
              help="train from an annotation record store instead of masks")
@click.option("--prototypes", "prototypes_path", default=None,
              type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def train(manifest, part, images, seed, c_value, gamma, records_path,
          prototypes_path, out):
    """Train the guidance classifier for one part class."""
    ws = _workspace(manifest)
    if part not in ws.part_classes:
        raise click.ClickException(f"unknown part class {part!r}")
    gamma_value = gamma if gamma == "auto" else float(gamma)
    config = classifier.TrainConfig(C=c_value, gamma=gamma_value, seed=seed)
    if records_path:
        if not prototypes_path:
            raise click.ClickException("--records requires --prototypes")
        protos = proto_mod.load_prototypes(prototypes_path)
        records = [r for r in proto_mod.load_records(records_path)
                   if r.part_class == part]
        if not records:
            raise click.ClickException(f"no records for part {part!r}")
        _, matrix, labels = proto_mod.records_to_dataset(records, protos,
                                                         ws.features)
        model = classifier.train(matrix, labels, part, config)
    else:
        rng = np.random.default_rng(seed)
        ids = ws.image_ids
        count = min(images, len(ids))
        train_ids = [ids[i] for i in
                     rng.choice(len(ids), size=count, replace=False)]
        model = pipeline.train_part_model(ws, part, train_ids, config)
    classifier.save_model(model, out)
    _write_meta(out, seed, {"part": part, "images": images, "C": c_value,
                            "gamma": str(gamma)})
    click.echo(f"trained {part!r} model with "
               f"{len(model.support_vectors)} support vectors -> {out}")


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--models", "models_dir", required=True,
              type=click.Path(exists=True),
              help="directory of <part>.json model files")
@click.option("--variant", default="lgsam", show_default=True)
@click.option("--backend", "backend_name", default="oracle", show_default=True,
              help="oracle | boxfill | URL | external command")
@click.option("--threshold", default=DEFAULT_CONFIDENCE_THRESHOLD,
              show_default=True)
@click.option("--out", required=True, type=click.Path())
def infer(manifest, models_dir, variant, backend_name, threshold, out):
    """Run guidance + segmentation; write predicted masks as JSON sidecars."""
    variant = _parse_variant(variant)
    ws = _workspace(manifest)
    backend = _backend(ws, backend_name)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_masks = 0
    for model_path in sorted(Path(models_dir).glob("*.json")):
        if model_path.name.endswith(".meta.json"):
            continue
        model = classifier.load_model(model_path)
        part = model.part_class
        for image_id in ws.image_ids:
            g = ws.grid(image_id)
            result = predict_part_mask(g, ws.features, model, variant,
                                       backend, part, threshold)
            save_mask(result.mask, out_dir / f"{image_id}_{part}.json")
            n_masks += 1
            for failure in result.failures:
                click.echo(f"region {failure.region_id} of {image_id}/{part} "
                           f"failed: {failure.error}", err=True)
    click.echo(f"wrote {n_masks} predicted masks to {out_dir}")


def _load_models(models_dir):
    models = {}
    for model_path in sorted(Path(models_dir).glob("*.json")):
        if model_path.name.endswith(".meta.json"):
            continue
        model = classifier.load_model(model_path)
        models[model.part_class] = model
    if not models:
        raise click.ClickException(f"no models found in {models_dir}")
    return models


@main.command("eval")
@click.option("--fixture", default=None, type=click.Path(exists=True),
              help="evaluate a pre-computed variant table CSV")
@click.option("--fuse", "do_fuse", is_flag=True,
              help="also fuse best-per-part over the ROI variants")
@click.option("--manifest", default=None, type=click.Path(exists=True))
@click.option("--models", "models_dir", default=None, type=click.Path())
@click.option("--variants", default="ggsam,cgsam,lgsam", show_default=True)
@click.option("--backend", "backend_name", default="oracle", show_default=True)
@click.option("--threshold", default=DEFAULT_CONFIDENCE_THRESHOLD,
              show_default=True)
@click.option("--seed", default=7, show_default=True)
@click.option("--out", default=None, type=click.Path(),
              help="write CSV report (+ .png figure) here")
def eval_command(fixture, do_fuse, manifest, models_dir, variants,
                 backend_name, threshold, seed, out):
    """Per-part IoU table, from a fixture CSV or a full pipeline run."""
    if fixture:
        table = evaluation.load_fixture_table(fixture)
    else:
        if not (manifest and models_dir):
            raise click.ClickException(
                "need --fixture, or --manifest with --models")
        ws = _workspace(manifest)
        models = _load_models(models_dir)
        variant_list = [_parse_variant(v.strip())
                        for v in variants.split(",") if v.strip()]
        backend = _backend(ws, backend_name)
        table, _ = pipeline.evaluate_variants(ws, models, variant_list,
                                              backend, threshold=threshold)
    click.echo(table.to_text())
    if do_fuse:
        roi_labels = [v for v in evaluation.roi_variant_labels()
                      if v in table.variants]
        fusion = evaluation.fuse_best_per_part(table, roi_labels or None)
        click.echo(f"fused average IoU: {fusion.average_iou:.3f}")
    if out:
        with open(out, "w", newline="") as f:
            f.write(table.to_csv())
        report.render_variant_table(table, str(out) + ".png")
        _write_meta(out, seed, {"fixture": str(fixture), "variants": variants,
                                "threshold": threshold})
        click.echo(f"wrote {out} and {out}.png")


@main.command()
@click.option("--table", "table_path", required=True,
              type=click.Path(exists=True))
@click.option("--variants", default="ggsam,cgsam,lgsam", show_default=True)
def fuse(table_path, variants):
    """Best-per-part fusion over a variant table CSV."""
    table = evaluation.load_fixture_table(table_path)
    labels = [v.strip() for v in variants.split(",") if v.strip()]
    unknown = [v for v in labels if v not in table.variants]
    if unknown:
        raise click.ClickException(f"variants not in table: {unknown}")
    fusion = evaluation.fuse_best_per_part(table, labels)
    for part in table.part_classes:
        click.echo(f"{part}: {fusion.chosen[part]} "
                   f"({table.cells[(part, fusion.chosen[part])]:.3f})")
    click.echo(f"fused average IoU: {fusion.average_iou:.3f} "
               f"(bounds {fusion.lower_bound:.3f}..{fusion.upper_bound:.3f})")


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(["labels", "selection"]),
              default="labels", show_default=True)
@click.option("--backend", "backend_name", default="oracle", show_default=True)
@click.option("--sizes", default="1,2,4,8,16,32,64", show_default=True)
@click.option("--repetitions", default=10, show_default=True)
@click.option("--seed", default=7, show_default=True)
@click.option("--variants", default="ggsam,cgsam,lgsam", show_default=True)
@click.option("--out", required=True, type=click.Path())
def curve(manifest, mode, backend_name, sizes, repetitions, seed, variants,
          out):
    """Label-efficiency or model-selection curves (CSV + figure)."""
    ws = _workspace(manifest)
    backend = _backend(ws, backend_name)
    size_list = [int(s) for s in sizes.split(",") if s.strip()]
    variant_list = [_parse_variant(v.strip())
                    for v in variants.split(",") if v.strip()]
    params = {"mode": mode, "sizes": size_list, "repetitions": repetitions,
              "variants": variants, "backend": backend_name}
    if mode == "labels":
        def run_for_size(size, rep_seed):
            return pipeline.label_efficiency_run(ws, variant_list, backend,
                                                 size, rep_seed)
        rows = evaluation.label_efficiency_curve(run_for_size, size_list,
                                                 repetitions, seed)
        evaluation.curve_rows_to_csv(rows, ["size", "variant", "mean", "std"],
                                     out)
        report.render_learning_curve(rows, str(out) + ".png")
    else:
        models = {part: pipeline.train_part_model(ws, part, ws.image_ids)
                  for part in ws.part_classes}
        _, per_image = pipeline.evaluate_variants(ws, models, variant_list,
                                                  backend)
        rows = evaluation.selection_experiment(
            per_image, ws.image_ids, ws.part_classes,
            [v.value for v in variant_list], size_list, repetitions, seed)
        evaluation.curve_rows_to_csv(rows, ["n", "mean", "std", "lower",
                                            "upper"], out)
        report.render_selection_curve(rows, str(out) + ".png")
    _write_meta(out, seed, params)
    click.echo(f"wrote {out} and {out}.png")


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--prototypes", "prototypes_path", required=True,
              type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8008, show_default=True)
@click.option("--store", default=None, type=click.Path(),
              help="label store path (PARTGUIDE_STORE env overrides)")
def serve(manifest, prototypes_path, host, port, store):
    """Run the annotation HTTP service."""
    import uvicorn

    from .service import create_app
    ws = _workspace(manifest)
    protos = proto_mod.load_prototypes(prototypes_path)
    app = create_app(ws, protos, store)
    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command("export-features-spec")
def export_features_spec():
    """Print the GSFV feature-blob byte layout for embedding producers."""
    click.echo(f"""GSFV feature blob, version {GSFV_VERSION} (all little-endian):

  offset 0   magic        4 bytes  ASCII "GSFV"
  offset 4   version      u16
  offset 6   patch_count  u32
  offset 10  dim          u32
  offset 14  index table  patch_count entries:
               id_len u16 | image_id utf-8 (id_len bytes) | patch_index u32
  then       matrix       patch_count * dim float32, row-major;
                          row i holds the feature vector for index entry i

All feature values must be finite. Rows are looked up by
(image_id, patch_index); pairs must be unique.""")


@main.command()
@click.option("--out", required=True, type=click.Path())
@click.option("--images", default=64, show_default=True)
@click.option("--seed", default=0, show_default=True)
def synth(out, images, seed):
    """Generate the synthetic geometric benchmark workspace."""
    bench = SyntheticBenchmark(n_images=images, seed=seed)
    manifest = bench.write(out)
    click.echo(f"wrote synthetic workspace with {images} images: {manifest}")


if __name__ == "__main__":
    main()
