use p2b_core::vision::{
    distance_transform, estimate_grid, facade_color, kmeans, kmeans_with_trace, lab_to_rgb,
    rectify_facade, rgb_to_lab, silhouette_distance, GridConfig, Homography, ImageBuffer, LabColor,
    PixelBox, RasterMask,
};
use proptest::prelude::*;

fn mask_strategy(max: usize) -> impl Strategy<Value = RasterMask> {
    (1..=max, 1..=max, 0.02f64..0.6).prop_flat_map(|(w, h, p)| {
        prop::collection::vec(prop::bool::weighted(p), w * h).prop_filter_map(
            "non-empty",
            move |data| {
                data.iter().any(|&b| b).then_some(RasterMask {
                    width: w,
                    height: h,
                    data,
                })
            },
        )
    })
}

fn brute_force_dt(m: &RasterMask) -> Vec<f64> {
    let set: Vec<(usize, usize)> = m.set_pixels().collect();
    let mut out = Vec::with_capacity(m.width * m.height);
    for y in 0..m.height {
        for x in 0..m.width {
            let best = set
                .iter()
                .map(|&(sx, sy)| {
                    let (dx, dy) = (sx as i64 - x as i64, sy as i64 - y as i64);
                    dx * dx + dy * dy
                })
                .min()
                .unwrap();
            out.push((best as f64).sqrt());
        }
    }
    out
}

fn brute_force_chamfer(a: &RasterMask, b: &RasterMask) -> f64 {
    let directed = |from: &RasterMask, to: &RasterMask| {
        let to_set: Vec<(usize, usize)> = to.set_pixels().collect();
        let pts: Vec<(usize, usize)> = from.set_pixels().collect();
        let total: f64 = pts
            .iter()
            .map(|&(x, y)| {
                to_set
                    .iter()
                    .map(|&(u, v)| {
                        ((x as f64 - u as f64).powi(2) + (y as f64 - v as f64).powi(2)).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        total / pts.len() as f64
    };
    0.5 * (directed(a, b) + directed(b, a))
}

proptest! {
    #[test]
    fn distance_transform_matches_brute_force(m in mask_strategy(32)) {
        prop_assert_eq!(distance_transform(&m).unwrap().data, brute_force_dt(&m));
    }

    #[test]
    fn chamfer_matches_definition_and_is_symmetric(
        (a, b) in mask_strategy(16).prop_flat_map(|a| {
            let (w, h) = (a.width, a.height);
            let b = prop::collection::vec(prop::bool::weighted(0.3), w * h)
                .prop_filter_map("non-empty", move |data| data.iter().any(|&v| v).then_some(RasterMask { width: w, height: h, data }));
            (Just(a), b)
        })
    ) {
        let d = silhouette_distance(&a, &b).unwrap();
        prop_assert!((d - brute_force_chamfer(&a, &b)).abs() < 1e-12);
        prop_assert_eq!(d, silhouette_distance(&b, &a).unwrap());
        prop_assert_eq!(d == 0.0, a == b);
    }

    #[test]
    fn homography_reproduces_correspondences(
        jitter in prop::collection::vec(-40.0f64..40.0, 8),
        scale in 50.0f64..600.0,
    ) {
        let base = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let src: Vec<(f64, f64)> = base.iter().enumerate()
            .map(|(i, &(x, y))| (100.0 + x * scale + jitter[2 * i] * scale / 400.0, 80.0 + y * scale + jitter[2 * i + 1] * scale / 400.0))
            .collect();
        let dst = [(0.0, 0.0), (320.0, 0.0), (320.0, 240.0), (0.0, 240.0)];
        let src = [src[0], src[1], src[2], src[3]];
        let h = Homography::from_points(&src, &dst).unwrap();
        for (s, d) in src.iter().zip(&dst) {
            let p = h.apply(*s);
            prop_assert!((p.0 - d.0).abs() < 1e-9 && (p.1 - d.1).abs() < 1e-9);
        }
    }

    #[test]
    fn lab_roundtrip_within_one(r in any::<u8>(), g in any::<u8>(), b in any::<u8>()) {
        let back = lab_to_rgb(rgb_to_lab([r, g, b]));
        for (x, y) in [r, g, b].iter().zip(back) {
            prop_assert!((*x as i32 - y as i32).abs() <= 1, "{:?} -> {:?}", [r, g, b], back);
        }
    }

    #[test]
    fn kmeans_deterministic_and_monotone(
        pts in prop::collection::vec((0.0f64..100.0, -60.0f64..60.0, -60.0f64..60.0), 1..200),
        k in 1usize..12,
        seed in any::<u64>(),
    ) {
        let pts: Vec<LabColor> = pts.into_iter().map(|(l, a, b)| LabColor::new(l, a, b)).collect();
        let (c1, trace) = kmeans_with_trace(&pts, k, seed).unwrap();
        prop_assert_eq!(&c1, &kmeans(&pts, k, seed).unwrap());
        prop_assert_eq!(c1.iter().map(|c| c.count).sum::<usize>(), pts.len());
        for w in trace.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-9, "{:?}", trace);
        }
    }
}

#[test]
fn every_byte_triple_survives_lab_roundtrip_on_a_grid() {
    for r in (0..=255).step_by(5) {
        for g in (0..=255).step_by(5) {
            for b in (0..=255).step_by(5) {
                let c = [r as u8, g as u8, b as u8];
                let back = lab_to_rgb(rgb_to_lab(c));
                assert!(
                    c.iter()
                        .zip(back)
                        .all(|(x, y)| (*x as i32 - y as i32).abs() <= 1),
                    "{c:?} {back:?}"
                );
            }
        }
    }
}

/// Checkerboard seen through a known homography; rectifying it must put the
/// inner corners back on a uniform lattice.
#[test]
fn rectified_checkerboard_is_uniform() {
    let (cells, cell) = (8usize, 40.0);
    let side = cells as f64 * cell;
    let rect = [(0.0, 0.0), (side, 0.0), (side, side), (0.0, side)];
    let quad = [(120.0, 60.0), (430.0, 95.0), (455.0, 420.0), (90.0, 470.0)];
    let board_to_image = Homography::from_points(&rect, &quad).unwrap();
    let image_to_board = board_to_image.inverse().unwrap();
    // supersampled render of the warped board
    let img = ImageBuffer::from_fn(560, 560, |x, y| {
        let mut acc = 0.0f64;
        for sy in 0..4 {
            for sx in 0..4 {
                let p = (
                    x as f64 + (sx as f64 + 0.5) / 4.0,
                    y as f64 + (sy as f64 + 0.5) / 4.0,
                );
                let (u, v) = image_to_board.apply(p);
                let inside = (0.0..side).contains(&u) && (0.0..side).contains(&v);
                let dark =
                    inside && ((u / cell).floor() as i64 + (v / cell).floor() as i64) % 2 == 0;
                acc += if dark { 20.0 } else { 235.0 };
            }
        }
        let g = (acc / 16.0).round() as u8;
        [g, g, g]
    });
    let (out, _) = rectify_facade(&img, &quad).unwrap();
    let (w, h) = (out.width as f64, out.height as f64);
    let luma = out.luma();
    let at = |x: usize, y: usize| luma[y * out.width + x];

    // locate each inner vertical edge along a row through the middle of a cell
    // and compare with the uniform lattice position
    for row_cell in 0..cells {
        let y = (((row_cell as f64 + 0.5) / cells as f64) * h) as usize;
        for k in 1..cells {
            let expect = k as f64 * w / cells as f64;
            let lo = (expect - 10.0) as usize;
            let hi = (expect + 10.0) as usize;
            let edge = (lo..hi)
                .max_by(|&a, &b| {
                    let ga = (at(a + 1, y) - at(a, y)).abs();
                    let gb = (at(b + 1, y) - at(b, y)).abs();
                    ga.total_cmp(&gb)
                })
                .unwrap() as f64
                + 1.0;
            assert!(
                (edge - expect).abs() <= 1.0,
                "row {row_cell} edge {k}: {edge} vs {expect}"
            );
        }
    }
}

/// Synthetic facade: light wall, dark windows on a known grid.
fn facade(
    w: usize,
    h: usize,
    floors: usize,
    cols: usize,
    wall: [u8; 3],
) -> (ImageBuffer, Vec<PixelBox>) {
    let (th, tw) = (h / floors, w / cols);
    let mut boxes = Vec::new();
    for f in 0..floors {
        for c in 0..cols {
            boxes.push(PixelBox {
                x0: c * tw + tw / 4,
                y0: f * th + th / 5,
                x1: c * tw + 3 * tw / 4 - 1,
                y1: f * th + 4 * th / 5 - 1,
            });
        }
    }
    let img = ImageBuffer::from_fn(w, h, |x, y| {
        if boxes.iter().any(|b| b.contains(x, y)) {
            [35, 40, 55]
        } else {
            wall
        }
    });
    (img, boxes)
}

#[test]
fn grid_of_synthetic_facade() {
    let (img, _) = facade(512, 512, 5, 4, [205, 195, 170]);
    let g = estimate_grid(&img, &GridConfig::default()).unwrap();
    assert_eq!((g.floors, g.columns), (5, 4));
    assert_eq!(*g.row_bounds.last().unwrap(), 512);
    assert!(g.row_bounds.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn wall_color_with_and_without_masking() {
    let beige = [214u8, 196, 160];
    // windows cover 30% of the facade: tiles 100x100 with 60x50 windows
    let (img, boxes) = {
        let mut boxes = Vec::new();
        for f in 0..3 {
            for c in 0..3 {
                boxes.push(PixelBox {
                    x0: c * 100 + 20,
                    y0: f * 100 + 25,
                    x1: c * 100 + 79,
                    y1: f * 100 + 74,
                });
            }
        }
        let img = ImageBuffer::from_fn(300, 300, |x, y| {
            if boxes.iter().any(|b| b.contains(x, y)) {
                [30, 36, 48]
            } else {
                // mild texture so the wall is not a single color
                let n = ((x * 7 + y * 13) % 5) as i32 - 2;
                beige.map(|v| (v as i32 + n) as u8)
            }
        });
        (img, boxes)
    };
    let masked = facade_color(&img, &boxes).unwrap();
    let unmasked = facade_color(&img, &[]).unwrap();
    for k in 0..3 {
        assert!(
            (masked[k] as i32 - beige[k] as i32).abs() <= 2,
            "{masked:?}"
        );
    }
    let err = |c: [u8; 3]| {
        c.iter()
            .zip(beige)
            .map(|(a, b)| (*a as i32 - b as i32).abs())
            .sum::<i32>()
    };
    assert!(err(masked) <= err(unmasked), "{masked:?} vs {unmasked:?}");
}

#[test]
fn uniform_wall_color() {
    let img = ImageBuffer::new(64, 64, [131, 127, 120]);
    let c = facade_color(&img, &[]).unwrap();
    assert!(c
        .iter()
        .zip([131u8, 127, 120])
        .all(|(a, b)| (*a as i32 - b as i32).abs() <= 1));
}
