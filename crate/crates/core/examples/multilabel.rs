//! Multi-label prompting on a hand-built three-class scene: the all-ones
//! prompt lights up a class that is absent from the image, and the mined
//! pixels are pulled to the nearest allowed centre.

use advcp::advcp::multilabel::{self, Layout, MultiLabelState};

fn main() -> advcp::Result<()> {
    // one image, classes {background, road, building}, 2×3 pixels
    let layout = Layout { n: 1, k: 3, h: 2, w: 3 };
    let labels = [1, 0, 1]; // road absent
    #[rustfmt::skip]
    let c_all1 = [
        0.9, 0.8, 0.2, 0.1, 0.7, 0.9, // background
        0.1, 0.9, 0.8, 0.2, 0.1, 0.6, // road: fires although absent
        0.0, 0.2, 0.9, 0.9, 0.3, 0.1, // building
    ];
    let c = multilabel::gate_response(&c_all1, &labels, layout)?;
    let mask = multilabel::multilabel_mask(&c_all1, &c, layout, 0.5)?;
    println!("mined mask per class:");
    for k in 0..layout.k {
        println!("  class {k}: {:?}", &mask[k * 6..][..6]);
    }

    // 2-d features per pixel and one centre per class
    #[rustfmt::skip]
    let features = [
        0.1, 0.9, 1.0, 0.2, 0.1, 0.8,
        0.0, 0.2, 0.9, 1.0, 0.1, 0.3,
    ];
    let state = MultiLabelState::new(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]])?;
    let mined = multilabel::multilabel_mine(&c_all1, &c, &features, &labels, &state, layout, 0.5)?;
    for a in &mined.assignments {
        println!("  pixel {:?} flagged for class {} -> centre {}", a.pixel, a.class, a.centre);
    }
    println!("loss {:.4}", mined.loss);
    Ok(())
}
