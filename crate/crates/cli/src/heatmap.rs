//! Plot-ready CSV of a cell map: one row per input cell with its grid
//! indices and the center of the output cell it maps to.

use std::io::Write;

use anyhow::Result;
use causal_repair_core::behavior::RepresentativeBehavior;

/// Column names for `dims` input axes, using the plant's state names when
/// they fit.
pub fn input_columns(names: &[&str], dims: usize) -> Vec<String> {
    if names.len() == dims {
        names.iter().map(|n| format!("{n}_cell")).collect()
    } else {
        (0..dims).map(|k| format!("x{k}_cell")).collect()
    }
}

fn output_columns(dims: usize) -> Vec<String> {
    if dims == 1 {
        vec!["control_center".to_owned()]
    } else {
        (0..dims).map(|j| format!("control{j}_center")).collect()
    }
}

pub fn write_heatmap<W: Write>(g: &RepresentativeBehavior, input_names: &[&str], out: W) -> Result<()> {
    let (inp, outg) = (g.input_grid(), g.output_grid());
    let mut w = csv::Writer::from_writer(out);
    let mut header = input_columns(input_names, inp.dims());
    header.extend(output_columns(outg.dims()));
    w.write_record(&header)?;
    for i in 0..inp.total() {
        let cell = inp.index_from_flat(i)?;
        let mut row: Vec<String> = cell.multi.iter().map(|k| k.to_string()).collect();
        row.extend(outg.center_of_flat(g.target(i))?.iter().map(|y| y.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use causal_repair_core::space::{BoxSpace, GridPartition};

    #[test]
    fn one_row_per_input_cell() {
        let inp = GridPartition::new(BoxSpace::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(), vec![0.5, 1.0]).unwrap();
        let out = GridPartition::new(BoxSpace::new(vec![-1.0], vec![1.0]).unwrap(), vec![1.0]).unwrap();
        let g = RepresentativeBehavior::new(inp, out, vec![0, 1]).unwrap();
        let mut buf = Vec::new();
        write_heatmap(&g, &["pos", "vel"], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "pos_cell,vel_cell,control_center\n0,0,-0.5\n1,0,0.5\n"
        );
    }
}
