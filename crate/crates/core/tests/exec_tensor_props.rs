use edgegraph_core::exec::{load_imbalance, ExecError};
use edgegraph_core::tensor::{layout_transform, layout_transform_on};
use edgegraph_core::{Device, DeviceBuffer, LaunchConfig, LayoutTag, Session, Tensor};
use proptest::prelude::*;

/// Reverses each block through shared memory in two phases.
fn reverse_blocks(s: &mut Session, data: Vec<f32>, block: usize) -> Result<Vec<f32>, ExecError> {
    let n = data.len();
    let mut buf = DeviceBuffer::from_f32(Device::Gpu, data);
    s.launch(
        |t| {
            let (b, i, bd) = (t.block_id(), t.thread_id(), t.block_dim());
            let g = b * bd + i;
            if t.phase() == 0 {
                let v = if g < n { t.ld_f32(0, g)? } else { 0.0 };
                t.set_shared_f32(i, v)?;
                return t.barrier();
            }
            let v = t.shared_f32(bd - 1 - i)?;
            if t.branch(g < n) {
                t.st_f32(0, g, v)?;
            }
            Ok(())
        },
        LaunchConfig::new(n.div_ceil(block).max(1), block).with_shared(block),
        &mut [&mut buf],
    )?;
    Ok(buf.as_f32().unwrap().to_vec())
}

fn packed() -> impl Strategy<Value = (Vec<usize>, LayoutTag)> {
    (1usize..3, 1usize..4, 1usize..5, 1usize..5, prop::sample::select(vec![1usize, 2, 4]))
        .prop_map(|(n, cb, h, w, f)| (vec![n, cb * f, h, w], LayoutTag::NchwC(f)))
}

proptest! {
    #[test]
    fn launches_are_deterministic(data in prop::collection::vec(-100.0f32..100.0, 1..200), block in 1usize..33) {
        let a = reverse_blocks(&mut Session::new(), data.clone(), block).unwrap();
        let b = reverse_blocks(&mut Session::new().with_race_detection(true), data.clone(), block).unwrap();
        prop_assert_eq!(&a, &b);
        let full = data.len().div_ceil(block) * block;
        for (g, v) in a.iter().enumerate() {
            let (blk, i) = (g / block, g % block);
            let src = blk * block + block - 1 - i;
            let expected = if src < data.len() { data[src] } else { 0.0 };
            prop_assert_eq!(*v, expected, "g={} full={}", g, full);
        }
    }

    #[test]
    fn layout_transform_preserves_elements((shape, layout) in packed(), seed in any::<u32>()) {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n as u32).map(|i| (i ^ seed) as f32).collect();
        let t = Tensor::from_f32(&shape, data).unwrap();
        let p = layout_transform(&t, layout).unwrap();
        let on_device = layout_transform_on(&mut Session::new(), &t, layout).unwrap();
        prop_assert_eq!(&p, &on_device);
        let mut idx = vec![0usize; 4];
        for _ in 0..n {
            prop_assert_eq!(t.get_f32(&idx).unwrap().to_bits(), p.get_f32(&idx).unwrap().to_bits());
            for d in (0..4).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        let back = layout_transform(&p, LayoutTag::Nchw).unwrap();
        prop_assert_eq!(back, t);
        let mut sorted: Vec<u32> = p.as_f32().unwrap().iter().map(|v| v.to_bits()).collect();
        let mut orig: Vec<u32> = (0..n as u32).map(|i| ((i ^ seed) as f32).to_bits()).collect();
        sorted.sort_unstable();
        orig.sort_unstable();
        prop_assert_eq!(sorted, orig);
    }
}

#[test]
fn unsynchronized_exchange_is_flagged() {
    let mut buf = DeviceBuffer::from_f32(Device::Gpu, vec![1.0; 4]);
    let mut s = Session::new().with_race_detection(true);
    let r = s.launch(
        |t| {
            let i = t.thread_id();
            t.st_f32(0, i, 2.0)?;
            let _ = t.ld_f32(0, (i + 1) % 4)?;
            Ok(())
        },
        LaunchConfig::new(1, 4),
        &mut [&mut buf],
    );
    assert!(matches!(r, Err(ExecError::Race { .. })));
}

#[test]
fn stats_examples() {
    assert_eq!(Session::new().stats().launches, 0);
    assert!((load_imbalance(&[4, 4, 4, 4, 2]) - 2.0 / 3.6).abs() < 1e-12);
    let mut s = Session::new();
    let mut buf = DeviceBuffer::zeroed(Device::Gpu, edgegraph_core::DType::F32, 8);
    s.launch(
        |t| {
            t.add_items(2);
            Ok(())
        },
        LaunchConfig::new(2, 4),
        &mut [&mut buf],
    )
    .unwrap();
    let st = s.stats();
    assert_eq!(st.per_thread_items, vec![2; 8]);
    assert_eq!(st.load_imbalance(), 0.0);
    assert_eq!(buf.as_f32().unwrap(), &[0.0; 8]);
}
