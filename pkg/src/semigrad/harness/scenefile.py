"""YAML scene files.

Example::

    format_version: 1
    name: cornell-box
    camera: {position: [0, 0, 0.99], look_at: [0, 0, -1], up: [0, 1, 0],
             vfov: 60, resolution: [64, 64]}
    materials:
      - {name: white, kind: lambertian, albedo: [0.75, 0.75, 0.75]}
      - {name: gloss, kind: phong-lobe, albedo: [0.7, 0.7, 0.7],
         phong_exponent: 20, specular_weight: 0.5}
    primitives:
      - quad: {origin: [-1, -1, -1], edge1: [0, 0, 2], edge2: [2, 0, 0]}
        material: white          # name or index
      - sphere: {center: [0, 0, 0], radius: 0.3, inward: false}
        material: 1
        emission: [5, 5, 5]      # optional, one-sided along the geometric normal

Quad normals are ``edge1 x edge2``; triangle normals ``(v1 - v0) x (v2 - v0)``.
"""

from __future__ import annotations

from importlib import resources

import yaml

from ..errors import ConfigurationError
from ..transport.scene import Camera, Material, Primitive, Quad, Scene, Sphere, Triangle

FORMAT_VERSION = 1
BUNDLED = ("furnace", "cornell-box", "glossy-box")


class SceneFileError(ConfigurationError):
    pass


class _LineDict(dict):
    line = 0


class _Loader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node):
    d = _LineDict(loader.construct_mapping(node, deep=True))
    d.line = node.start_mark.line + 1
    return d


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


class _Ctx:
    def __init__(self, source):
        self.source = source

    def fail(self, node, path, msg):
        line = getattr(node, "line", 0)
        where = f"{self.source}:{line}" if line else self.source
        raise SceneFileError(f"{where}: {path}: {msg}")

    def get(self, node, key, path, required=True, default=None):
        if not isinstance(node, dict):
            self.fail(node, path, "expected a mapping")
        if key not in node:
            if required:
                self.fail(node, f"{path}.{key}", "missing required field")
            return default
        return node[key]

    def vec3(self, node, key, path, required=True, default=None):
        v = self.get(node, key, path, required, default)
        if v is default and not required:
            return default
        if not isinstance(v, (list, tuple)) or len(v) != 3 or not all(
                isinstance(c, (int, float)) and not isinstance(c, bool) for c in v):
            self.fail(node, f"{path}.{key}", f"expected a list of 3 numbers, got {v!r}")
        return tuple(float(c) for c in v)

    def number(self, node, key, path, required=True, default=None):
        v = self.get(node, key, path, required, default)
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            self.fail(node, f"{path}.{key}", f"expected a number, got {v!r}")
        return float(v)


def _known(ctx, node, path, keys):
    extra = set(node) - set(keys)
    if extra:
        ctx.fail(node, path, f"unknown field(s) {sorted(extra)}")


def parse_scene(text: str, source: str = "<scene>") -> Scene:
    try:
        doc = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise SceneFileError(f"{source}: YAML syntax error: {exc}") from exc
    ctx = _Ctx(source)
    if not isinstance(doc, dict):
        raise SceneFileError(f"{source}: top level must be a mapping")
    _known(ctx, doc, "<root>", ("format_version", "name", "camera", "materials", "primitives"))
    version = ctx.get(doc, "format_version", "<root>")
    if version != FORMAT_VERSION:
        ctx.fail(doc, "format_version", f"unsupported version {version!r} (expected {FORMAT_VERSION})")

    materials, names = [], {}
    mats = ctx.get(doc, "materials", "<root>")
    if not isinstance(mats, list) or not mats:
        ctx.fail(doc, "materials", "expected a non-empty list")
    for i, m in enumerate(mats):
        path = f"materials[{i}]"
        if not isinstance(m, dict):
            ctx.fail(doc, path, "expected a mapping")
        _known(ctx, m, path, ("name", "kind", "albedo", "phong_exponent", "specular_weight"))
        try:
            mat = Material(kind=ctx.get(m, "kind", path, False, "lambertian"),
                           albedo=ctx.vec3(m, "albedo", path),
                           phong_exponent=ctx.number(m, "phong_exponent", path, False, 1.0),
                           specular_weight=ctx.number(m, "specular_weight", path, False, 0.0))
        except SceneFileError:
            raise
        except ConfigurationError as exc:
            ctx.fail(m, path, str(exc))
        if "name" in m:
            names[str(m["name"])] = i
        materials.append(mat)

    prims = []
    plist = ctx.get(doc, "primitives", "<root>")
    if not isinstance(plist, list) or not plist:
        ctx.fail(doc, "primitives", "expected a non-empty list")
    for i, p in enumerate(plist):
        path = f"primitives[{i}]"
        if not isinstance(p, dict):
            ctx.fail(doc, path, "expected a mapping")
        _known(ctx, p, path, ("quad", "sphere", "triangle", "material", "emission"))
        kinds = [k for k in ("quad", "sphere", "triangle") if k in p]
        if len(kinds) != 1:
            ctx.fail(p, path, "exactly one of quad/sphere/triangle is required")
        kind = kinds[0]
        s = p[kind]
        spath = f"{path}.{kind}"
        try:
            if kind == "quad":
                _known(ctx, s, spath, ("origin", "edge1", "edge2"))
                shape = Quad(ctx.vec3(s, "origin", spath), ctx.vec3(s, "edge1", spath),
                             ctx.vec3(s, "edge2", spath))
            elif kind == "sphere":
                _known(ctx, s, spath, ("center", "radius", "inward"))
                shape = Sphere(ctx.vec3(s, "center", spath), ctx.number(s, "radius", spath),
                               bool(ctx.get(s, "inward", spath, False, False)))
            else:
                _known(ctx, s, spath, ("v0", "v1", "v2"))
                shape = Triangle(ctx.vec3(s, "v0", spath), ctx.vec3(s, "v1", spath),
                                 ctx.vec3(s, "v2", spath))
        except SceneFileError:
            raise
        except ConfigurationError as exc:
            ctx.fail(s, spath, str(exc))
        ref = ctx.get(p, "material", path)
        if isinstance(ref, str):
            if ref not in names:
                ctx.fail(p, f"{path}.material", f"unknown material name {ref!r}")
            mid = names[ref]
        elif isinstance(ref, int) and not isinstance(ref, bool):
            if not 0 <= ref < len(materials):
                ctx.fail(p, f"{path}.material", f"material index {ref} out of range")
            mid = ref
        else:
            ctx.fail(p, f"{path}.material", f"expected a name or index, got {ref!r}")
        emis = ctx.vec3(p, "emission", path, False, (0.0, 0.0, 0.0))
        if any(e < 0 for e in emis):
            ctx.fail(p, f"{path}.emission", "emission must be non-negative")
        prims.append(Primitive(shape, mid, emis))

    camera = None
    if "camera" in doc:
        c = doc["camera"]
        _known(ctx, c, "camera", ("position", "look_at", "up", "vfov", "resolution"))
        res = ctx.get(c, "resolution", "camera", False, [64, 64])
        if not (isinstance(res, list) and len(res) == 2 and all(isinstance(r, int) and r > 0 for r in res)):
            ctx.fail(c, "camera.resolution", f"expected [width, height] positive integers, got {res!r}")
        try:
            camera = Camera(ctx.vec3(c, "position", "camera"), ctx.vec3(c, "look_at", "camera"),
                            ctx.vec3(c, "up", "camera", False, (0.0, 1.0, 0.0)),
                            ctx.number(c, "vfov", "camera", False, 40.0), res[0], res[1])
        except SceneFileError:
            raise
        except ConfigurationError as exc:
            ctx.fail(c, "camera", str(exc))
    try:
        return Scene(prims, materials, camera, str(doc.get("name", "")))
    except ConfigurationError as exc:
        raise SceneFileError(f"{source}: {exc}") from exc


def scene_to_dict(scene: Scene) -> dict:
    doc = {"format_version": FORMAT_VERSION, "name": scene.name}
    if scene.camera is not None:
        c = scene.camera
        doc["camera"] = {"position": list(c.position), "look_at": list(c.look_at), "up": list(c.up),
                         "vfov": c.vfov, "resolution": [c.width, c.height]}
    mats = []
    for m in scene.materials:
        d = {"kind": m.kind, "albedo": list(m.albedo)}
        if m.kind != "lambertian":
            d.update(phong_exponent=m.phong_exponent, specular_weight=m.specular_weight)
        mats.append(d)
    doc["materials"] = mats
    prims = []
    for p in scene.primitives:
        s = p.shape
        if isinstance(s, Quad):
            d = {"quad": {"origin": list(s.origin), "edge1": list(s.edge1), "edge2": list(s.edge2)}}
        elif isinstance(s, Sphere):
            d = {"sphere": {"center": list(s.center), "radius": s.radius, "inward": s.inward}}
        else:
            d = {"triangle": {"v0": list(s.v0), "v1": list(s.v1), "v2": list(s.v2)}}
        d["material"] = p.material_id
        if any(p.emission):
            d["emission"] = list(p.emission)
        prims.append(d)
    doc["primitives"] = prims
    return doc


def serialize_scene(scene: Scene) -> str:
    return yaml.safe_dump(scene_to_dict(scene), sort_keys=False, default_flow_style=None, width=100)


def load_scene(path) -> Scene:
    """Load a scene file, or a bundled scene by name (``furnace``, ``cornell-box``, ``glossy-box``)."""
    path = str(path)
    if path in BUNDLED:
        text = resources.files("semigrad.scenes").joinpath(f"{path}.yaml").read_text()
        return parse_scene(text, f"<bundled:{path}>")
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise SceneFileError(f"cannot read scene file {path}: {exc}") from exc
    return parse_scene(text, path)


def save_scene(path, scene: Scene):
    with open(path, "w") as f:
        f.write(serialize_scene(scene))
