use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use ssrmap::codec::fit_context_model;
use ssrmap::mapstore::{
    build_map, generate_synthetic, map_vectors, query_map, Dataset, Split, SyntheticSpec,
};
use ssrmap::ssr::{train, PairedSet, SsrConfig, SsrModel};
use ssrmap::textembed::HashedBowEmbedder;
use ssrmap_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ssrm_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn take(buf: SsrmBuffer) -> Vec<u8> {
    let v = unsafe { std::slice::from_raw_parts(buf.data, buf.len) }.to_vec();
    unsafe { ssrm_buffer_free(buf) };
    v
}

fn empty() -> SsrmBuffer {
    SsrmBuffer {
        data: ptr::null_mut(),
        len: 0,
    }
}

fn fit(lines: &[&str]) -> *mut SsrmCodec {
    let owned: Vec<CString> = lines.iter().map(|l| CString::new(*l).unwrap()).collect();
    let ptrs: Vec<_> = owned.iter().map(|c| c.as_ptr()).collect();
    let mut codec = ptr::null_mut();
    assert_eq!(
        unsafe { ssrm_codec_fit(ptrs.as_ptr(), ptrs.len(), 3, &mut codec) },
        SsrmStatus::Ok
    );
    codec
}

#[test]
fn codec_round_trips_and_reports_errors() {
    let codec = fit(&["a red door near the old tree", "a blue door near the river"]);
    for text in [
        &b""[..],
        b"a red door near the river",
        &[0u8, 255, 10, 13, 200][..],
    ] {
        let mut blob = empty();
        assert_eq!(
            unsafe { ssrm_codec_encode(codec, text.as_ptr(), text.len(), &mut blob) },
            SsrmStatus::Ok
        );
        let blob = take(blob);
        let mut back = empty();
        assert_eq!(
            unsafe { ssrm_codec_decode(codec, blob.as_ptr(), blob.len(), &mut back) },
            SsrmStatus::Ok
        );
        assert_eq!(take(back), text);
    }

    // Serialized models reload to an equivalent handle.
    let mut bytes = empty();
    assert_eq!(
        unsafe { ssrm_codec_to_bytes(codec, &mut bytes) },
        SsrmStatus::Ok
    );
    let bytes = take(bytes);
    let mut reloaded = ptr::null_mut();
    assert_eq!(
        unsafe { ssrm_codec_from_bytes(bytes.as_ptr(), bytes.len(), &mut reloaded) },
        SsrmStatus::Ok
    );

    let text = b"a red door";
    let mut blob = empty();
    unsafe { ssrm_codec_encode(codec, text.as_ptr(), text.len(), &mut blob) };
    let blob = take(blob);
    let mut back = empty();
    assert_eq!(
        unsafe { ssrm_codec_decode(reloaded, blob.as_ptr(), blob.len(), &mut back) },
        SsrmStatus::Ok
    );
    assert_eq!(take(back), text);

    let other = fit(&["something else entirely"]);
    let mut back = empty();
    assert_eq!(
        unsafe { ssrm_codec_decode(other, blob.as_ptr(), blob.len(), &mut back) },
        SsrmStatus::ModelMismatch
    );
    assert!(last_error().contains("model mismatch"), "{}", last_error());
    assert!(back.data.is_null());

    assert_eq!(
        unsafe { ssrm_codec_decode(codec, blob.as_ptr(), 5, &mut back) },
        SsrmStatus::Corrupt
    );
    assert_eq!(
        unsafe { ssrm_codec_from_bytes(b"junk".as_ptr(), 4, &mut reloaded) },
        SsrmStatus::Corrupt
    );
    assert_eq!(
        unsafe { ssrm_codec_encode(ptr::null(), text.as_ptr(), 1, &mut back) },
        SsrmStatus::NullPointer
    );
    assert_eq!(last_error(), "codec is null");

    let bad = [c"\xff\xfe".as_ptr()];
    let mut c = ptr::null_mut();
    assert_eq!(
        unsafe { ssrm_codec_fit(bad.as_ptr(), 1, 3, &mut c) },
        SsrmStatus::InvalidUtf8
    );
    assert!(c.is_null());

    let missing = CString::new("/nonexistent/codec.bin").unwrap();
    assert_eq!(
        unsafe { ssrm_codec_from_file(missing.as_ptr(), &mut c) },
        SsrmStatus::Io
    );

    unsafe {
        ssrm_codec_free(codec);
        ssrm_codec_free(other);
        ssrm_codec_free(reloaded);
        ssrm_codec_free(ptr::null_mut());
        ssrm_buffer_free(empty());
    }
}

struct Fixture {
    dataset: Dataset,
    model: SsrModel,
    map_bytes: Vec<u8>,
    caption_map_bytes: Vec<u8>,
}

fn fixture() -> Fixture {
    let spec = SyntheticSpec {
        num_places: 6,
        items_per_place: 8,
        dim: 24,
        fine_rank: 4,
        ..SyntheticSpec::new(5)
    };
    let embedder = HashedBowEmbedder::default();
    let dataset = Dataset::from_records(generate_synthetic(&spec).unwrap(), &embedder).unwrap();
    let refs = dataset.indices(Split::Reference);
    let mut cfg = SsrConfig::new(24, 0);
    cfg.epochs = 2;
    let mut model = SsrModel::new(24, 24, cfg).unwrap();
    let (images, texts) = (dataset.images(&refs), dataset.texts(&refs));
    train(&mut model, PairedSet::new(&images, &texts).unwrap(), 1.0).unwrap();
    let codec = fit_context_model(&dataset.captions(&refs), 3).unwrap();
    let map = build_map(&model, &dataset, &refs, 16, &codec, "q8", &embedder).unwrap();
    let caption_map = build_map(&model, &dataset, &refs, 0, &codec, "fp32", &embedder).unwrap();
    Fixture {
        map_bytes: map.to_bytes().unwrap(),
        caption_map_bytes: caption_map.to_bytes().unwrap(),
        dataset,
        model,
    }
}

#[test]
fn map_queries_match_the_library() {
    let fx = fixture();
    let model_bytes = fx.model.to_bytes();
    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { ssrm_model_from_bytes(model_bytes.as_ptr(), model_bytes.len(), &mut model) },
        SsrmStatus::Ok
    );
    assert_eq!(unsafe { ssrm_model_input_dim(model) }, 24);
    assert_eq!(unsafe { ssrm_model_output_dim(model) }, 24);

    for (bytes, dims) in [(&fx.map_bytes, 16), (&fx.caption_map_bytes, 0)] {
        let mut map = ptr::null_mut();
        assert_eq!(
            unsafe { ssrm_map_from_bytes(bytes.as_ptr(), bytes.len(), &mut map) },
            SsrmStatus::Ok
        );
        let lib = ssrmap::mapstore::CompressedMap::from_bytes(bytes).unwrap();
        let vectors = map_vectors(&lib).unwrap();
        assert_eq!(unsafe { ssrm_map_len(map) }, lib.len());
        assert_eq!(unsafe { ssrm_map_dims(map) }, dims);

        let mut bpe = 0.0;
        assert_eq!(
            unsafe { ssrm_map_bytes_per_element(map, true, &mut bpe) },
            SsrmStatus::Ok
        );
        assert_eq!(bpe, lib.bytes_per_element(true).unwrap());

        let mut caption = empty();
        assert_eq!(
            unsafe { ssrm_map_caption(map, 3, &mut caption) },
            SsrmStatus::Ok
        );
        assert_eq!(
            String::from_utf8(take(caption)).unwrap(),
            lib.decode_caption(3).unwrap()
        );
        let mut id = empty();
        assert_eq!(
            unsafe { ssrm_map_element_id(map, 3, &mut id) },
            SsrmStatus::Ok
        );
        assert_eq!(take(id), lib.elements[3].id.as_bytes());
        assert_eq!(
            unsafe { ssrm_map_caption(map, lib.len(), &mut empty()) },
            SsrmStatus::InvalidArgument
        );

        let q_model = if dims == 0 {
            ptr::null()
        } else {
            model.cast_const()
        };
        for &q in &fx.dataset.indices(Split::Query) {
            let r = &fx.dataset.records[q];
            let cap = CString::new(r.caption.as_str()).unwrap();
            let mut hits = [SsrmHit {
                index: 0,
                similarity: 0.0,
            }; 4];
            let mut n = 0;
            let status = unsafe {
                ssrm_map_query(
                    map,
                    q_model,
                    r.image_embedding.as_slice().as_ptr(),
                    r.image_embedding.dim(),
                    cap.as_ptr(),
                    hits.as_mut_ptr(),
                    4,
                    &mut n,
                )
            };
            assert_eq!(status, SsrmStatus::Ok, "{}", last_error());
            let want = query_map(
                &lib,
                &vectors,
                Some(&fx.model),
                r.image_embedding.as_slice(),
                &r.caption,
                4,
            )
            .unwrap();
            assert_eq!(n, want.len());
            for (h, w) in hits.iter().zip(&want) {
                assert_eq!((h.index, h.similarity), (w.index, w.similarity));
            }
        }

        let r = &fx.dataset.records[0];
        let cap = CString::new(r.caption.as_str()).unwrap();
        let mut n = 0;
        if dims > 0 {
            let status = unsafe {
                ssrm_map_query(
                    map,
                    ptr::null(),
                    r.image_embedding.as_slice().as_ptr(),
                    r.image_embedding.dim(),
                    cap.as_ptr(),
                    ptr::null_mut(),
                    0,
                    &mut n,
                )
            };
            assert_eq!(status, SsrmStatus::InvalidArgument);
            let status = unsafe {
                ssrm_map_query(
                    map,
                    model,
                    r.image_embedding.as_slice().as_ptr(),
                    7,
                    cap.as_ptr(),
                    ptr::null_mut(),
                    0,
                    &mut n,
                )
            };
            assert_eq!(status, SsrmStatus::Dimension);
        }
        unsafe { ssrm_map_free(map) };
    }

    let r = &fx.dataset.records[0];
    let mut prefix = [0.0; 8];
    assert_eq!(
        unsafe {
            ssrm_model_project(
                model,
                r.image_embedding.as_slice().as_ptr(),
                24,
                8,
                prefix.as_mut_ptr(),
            )
        },
        SsrmStatus::Ok
    );
    let z = r.image_embedding.clone();
    assert_eq!(
        ssrmap::ssr::project(&fx.model, &z, 8).unwrap().as_slice(),
        &prefix
    );
    assert_eq!(
        unsafe {
            ssrm_model_project(
                model,
                r.image_embedding.as_slice().as_ptr(),
                24,
                25,
                prefix.as_mut_ptr(),
            )
        },
        SsrmStatus::InvalidArgument
    );
    unsafe { ssrm_model_free(model) };
}

#[test]
fn maps_load_from_files() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ssrm");
    std::fs::write(&path, &fx.map_bytes).unwrap();
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut map = ptr::null_mut();
    assert_eq!(
        unsafe { ssrm_map_from_file(c_path.as_ptr(), &mut map) },
        SsrmStatus::Ok
    );
    let mut bytes = empty();
    assert_eq!(
        unsafe { ssrm_map_to_bytes(map, &mut bytes) },
        SsrmStatus::Ok
    );
    assert_eq!(take(bytes), fx.map_bytes);
    unsafe { ssrm_map_free(map) };

    std::fs::write(&path, &fx.map_bytes[..fx.map_bytes.len() / 2]).unwrap();
    let status = unsafe { ssrm_map_from_file(c_path.as_ptr(), &mut map) };
    assert_eq!(status, SsrmStatus::Corrupt, "{}", last_error());
}

#[test]
fn header_compiles_and_links_from_c() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // Integration tests live in <target>/<profile>/deps.
    let profile_dir = std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    let lib = profile_dir.join("libssrmap_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!(
            "skipping: no C compiler or static library at {}",
            lib.display()
        );
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(crate_dir.join("include"))
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = Command::new(&exe).output().unwrap();
    assert!(
        run.status.success(),
        "{}{}",
        String::from_utf8_lossy(&run.stdout),
        String::from_utf8_lossy(&run.stderr)
    );
}
