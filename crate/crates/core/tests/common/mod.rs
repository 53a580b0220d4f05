//! Straight-line reference implementations used as test oracles. They are
//! written from the operator definitions and share no code with the crate.
#![allow(dead_code, clippy::needless_range_loop)]

/// Stable per-segment argsort by insertion sort; NaN sorts last in both
/// orders. Returns segment-relative indices.
pub fn argsort_oracle(values: &[f32], offsets: &[usize], ascending: bool) -> Vec<u32> {
    let before = |a: f32, b: f32| -> bool {
        match (a.is_nan(), b.is_nan()) {
            (false, true) => true,
            (_, true) | (true, false) => false,
            _ => {
                if ascending {
                    a < b
                } else {
                    a > b
                }
            }
        }
    };
    let mut out = Vec::with_capacity(values.len());
    for w in offsets.windows(2) {
        let seg = &values[w[0]..w[1]];
        let mut idx: Vec<u32> = Vec::with_capacity(seg.len());
        for i in 0..seg.len() as u32 {
            let mut pos = idx.len();
            while pos > 0 && before(seg[i as usize], seg[idx[pos - 1] as usize]) {
                pos -= 1;
            }
            idx.insert(pos, i);
        }
        out.extend(idx);
    }
    out
}

pub fn ceil_log2(x: usize) -> usize {
    let mut k = 0;
    while (1usize << k) < x {
        k += 1;
    }
    k
}

pub fn scan_i64_oracle(values: &[i32], exclusive: bool) -> Vec<i64> {
    let mut acc = 0i64;
    values
        .iter()
        .map(|&v| {
            let before = acc;
            acc += v as i64;
            if exclusive {
                before
            } else {
                acc
            }
        })
        .collect()
}

pub fn scan_f64_oracle(values: &[f32], exclusive: bool) -> Vec<f64> {
    let mut acc = 0f64;
    values
        .iter()
        .map(|&v| {
            let before = acc;
            acc += v as f64;
            if exclusive {
                before
            } else {
                acc
            }
        })
        .collect()
}

/// Three-stage chunked scan in f32 with the fixed summation order: chunk
/// local scans from zero, a doubling scan over chunk totals, then chunk `g`
/// adds the inclusive total of chunks before it.
pub fn scan_chunked_oracle(values: &[f32], exclusive: bool, p: usize) -> Vec<f32> {
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    let chunk = n.div_ceil(p);
    let procs = n.div_ceil(chunk);
    let mut out = vec![0f32; n];
    let mut totals = vec![0f32; procs];
    for g in 0..procs {
        let mut acc = 0f32;
        for j in g * chunk..((g + 1) * chunk).min(n) {
            if exclusive {
                out[j] = acc;
                acc += values[j];
            } else {
                acc += values[j];
                out[j] = acc;
            }
        }
        totals[g] = acc;
    }
    let mut d = 1;
    while d < procs {
        let prev = totals.clone();
        for i in d..procs {
            totals[i] = prev[i - d] + prev[i];
        }
        d *= 2;
    }
    for g in 1..procs {
        for j in g * chunk..((g + 1) * chunk).min(n) {
            out[j] += totals[g - 1];
        }
    }
    out
}

pub type Row = (i32, f32, [f32; 4]);

pub fn iou_oracle(a: &[f32; 4], b: &[f32; 4]) -> f32 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = w * h;
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// O(n^2) greedy NMS. Returns input indices of kept rows in output order.
pub fn nms_oracle(rows: &[Row], iou_thr: f32, score_thr: f32, top_k: Option<usize>) -> Vec<usize> {
    let mut cand: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].0 >= 0 && rows[i].1 >= score_thr).collect();
    // stable selection sort by descending score keeps equal scores in index order
    for i in 0..cand.len() {
        let mut m = i;
        for j in i + 1..cand.len() {
            if rows[cand[j]].1 > rows[cand[m]].1 {
                m = j;
            }
        }
        let v = cand.remove(m);
        cand.insert(i, v);
    }
    if let Some(k) = top_k {
        cand.truncate(k);
    }
    let mut kept: Vec<usize> = Vec::new();
    for &i in &cand {
        if kept.iter().all(|&k| rows[k].0 != rows[i].0 || iou_oracle(&rows[k].2, &rows[i].2) < iou_thr) {
            kept.push(i);
        }
    }
    kept
}

/// Decode one anchor with SSD variances and clip to the unit square.
pub fn decode_oracle(a: [f32; 4], l: [f32; 4], v: [f32; 4]) -> [f32; 4] {
    let (aw, ah) = (a[2] - a[0], a[3] - a[1]);
    let (ax, ay) = ((a[0] + a[2]) / 2.0, (a[1] + a[3]) / 2.0);
    let cx = ax + l[0] * v[0] * aw;
    let cy = ay + l[1] * v[1] * ah;
    let w = aw * (l[2] * v[2]).exp();
    let h = ah * (l[3] * v[3]).exp();
    [
        (cx - w / 2.0).clamp(0.0, 1.0),
        (cy - h / 2.0).clamp(0.0, 1.0),
        (cx + w / 2.0).clamp(0.0, 1.0),
        (cy + h / 2.0).clamp(0.0, 1.0),
    ]
}

/// Per batch element: rows after class selection and decoding, then the
/// NMS oracle over them. Returns the kept rows in output order.
#[allow(clippy::too_many_arguments)]
pub fn multibox_oracle(
    probs: &[f32],
    loc: &[f32],
    anchors: &[f32],
    batch: usize,
    classes: usize,
    a: usize,
    var: [f32; 4],
    score_thr: f32,
    iou_thr: f32,
) -> Vec<Vec<Row>> {
    (0..batch)
        .map(|b| {
            let rows: Vec<Row> = (0..a)
                .map(|i| {
                    let mut best = (-1i32, 0f32);
                    for c in 1..classes {
                        let p = probs[(b * classes + c) * a + i];
                        if best.0 < 0 || p > best.1 {
                            best = ((c - 1) as i32, p);
                        }
                    }
                    if best.1 <= 0.0 {
                        return (-1, -1.0, [-1.0; 4]);
                    }
                    let an = [anchors[4 * i], anchors[4 * i + 1], anchors[4 * i + 2], anchors[4 * i + 3]];
                    let o = (b * a + i) * 4;
                    (best.0, best.1, decode_oracle(an, [loc[o], loc[o + 1], loc[o + 2], loc[o + 3]], var))
                })
                .collect();
            nms_oracle(&rows, iou_thr, score_thr, None).into_iter().map(|i| rows[i]).collect()
        })
        .collect()
}

/// ROIAlign evaluated sample by sample: pixel-center convention, ROI
/// clamped to the map, empty extents widened to one pixel. Sample positions
/// are formed in f32 like the operator's; interpolation and averaging run in
/// f64.
#[allow(clippy::too_many_arguments)]
pub fn roi_align_oracle(
    f: &[f32],
    c: usize,
    h: usize,
    w: usize,
    roi: [f32; 4],
    ph: usize,
    pw: usize,
    sr: usize,
) -> Vec<f64> {
    let x1 = roi[0].clamp(0.0, w as f32);
    let y1 = roi[1].clamp(0.0, h as f32);
    let x2 = roi[2].clamp(x1, w as f32);
    let y2 = roi[3].clamp(y1, h as f32);
    let rw = if x2 > x1 { x2 - x1 } else { 1.0 };
    let rh = if y2 > y1 { y2 - y1 } else { 1.0 };
    let px = |ch: usize, y: usize, x: usize| f[(ch * h + y) * w + x] as f64;
    let sample = |ch: usize, y: f32, x: f32| -> f64 {
        if y < -1.0 || y > h as f32 || x < -1.0 || x > w as f32 {
            return 0.0;
        }
        let (y, x) = (y.max(0.0) as f64, x.max(0.0) as f64);
        let (y0, x0) = ((y.floor() as usize).min(h - 1), (x.floor() as usize).min(w - 1));
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let ly = if y0 == h - 1 { 0.0 } else { y - y0 as f64 };
        let lx = if x0 == w - 1 { 0.0 } else { x - x0 as f64 };
        (1.0 - ly) * (1.0 - lx) * px(ch, y0, x0)
            + (1.0 - ly) * lx * px(ch, y0, x1)
            + ly * (1.0 - lx) * px(ch, y1, x0)
            + ly * lx * px(ch, y1, x1)
    };
    let (bh, bw) = (rh / ph as f32, rw / pw as f32);
    let mut out = Vec::with_capacity(c * ph * pw);
    for ch in 0..c {
        for py in 0..ph {
            for pxi in 0..pw {
                let mut acc = 0.0;
                for iy in 0..sr {
                    for ix in 0..sr {
                        let y = y1 + py as f32 * bh + (iy as f32 + 0.5) * bh / sr as f32 - 0.5;
                        let x = x1 + pxi as f32 * bw + (ix as f32 + 0.5) * bw / sr as f32 - 0.5;
                        acc += sample(ch, y, x);
                    }
                }
                out.push(acc / (sr * sr) as f64);
            }
        }
    }
    out
}

/// Counts schedule configs by brute force over every 5-tuple.
pub fn schedule_space_count(k: usize, oh: usize, ow: usize, reduction: usize) -> usize {
    let mut n = 0;
    for oc in 1..=k {
        for hs in 1..=oh {
            for wt in 1..=ow {
                for unroll in 0..=reduction {
                    for vec in 1..=8 {
                        let ok = k.is_multiple_of(oc)
                            && oh.is_multiple_of(hs)
                            && ow.is_multiple_of(wt)
                            && (unroll == 0 || unroll == reduction)
                            && [1, 4, 8].contains(&vec)
                            && oc.is_multiple_of(vec);
                        n += ok as usize;
                    }
                }
            }
        }
    }
    n
}

/// Minimum of node costs plus edge costs over every layout assignment.
pub fn layout_brute_force(
    costs: &[Vec<f64>],
    edges: &[(usize, usize)],
    tc: &dyn Fn(usize, usize, usize, usize) -> f64,
) -> f64 {
    let n = costs.len();
    let mut pick = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut total: f64 = (0..n).map(|i| costs[i][pick[i]]).sum();
        for &(p, c) in edges {
            total += tc(p, c, pick[p], pick[c]);
        }
        best = best.min(total);
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            pick[i] += 1;
            if pick[i] < costs[i].len() {
                break;
            }
            pick[i] = 0;
            i += 1;
        }
    }
}

/// Direct NCHW convolution in f64 over the textbook seven-deep loop nest.
/// Dimensions: (n, c, h, w), (k, r, s), stride, pad, dilation, groups.
#[allow(clippy::too_many_arguments)]
pub fn conv_oracle(
    x: &[f32],
    wt: &[f32],
    (n, c, h, w): (usize, usize, usize, usize),
    (k, r, s): (usize, usize, usize),
    (sh, sw): (usize, usize),
    (ph, pw): (usize, usize),
    (dh, dw): (usize, usize),
    g: usize,
) -> Vec<f64> {
    let oh = (h + 2 * ph - dh * (r - 1) - 1) / sh + 1;
    let ow = (w + 2 * pw - dw * (s - 1) - 1) / sw + 1;
    let (cg, kg) = (c / g, k / g);
    let mut out = vec![0f64; n * k * oh * ow];
    for b in 0..n {
        for o in 0..k {
            let grp = o / kg;
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = 0f64;
                    for ci in 0..cg {
                        for ry in 0..r {
                            for sx in 0..s {
                                let iy = (y * sh + ry * dh) as isize - ph as isize;
                                let ix = (xo * sw + sx * dw) as isize - pw as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let cin = grp * cg + ci;
                                let xv = x[((b * c + cin) * h + iy as usize) * w + ix as usize] as f64;
                                let wv = wt[((o * cg + ci) * r + ry) * s + sx] as f64;
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((b * k + o) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    out
}
