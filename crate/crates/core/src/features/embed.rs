use crate::autodiff::{Scalar, Tape, Var};

/// Looks up one embedding row per categorical field for every example.
///
/// `indices` is row-major `[batch, num_fields]`; `tables[f]` is the
/// `[vocab_size, dim]` table of field `f`. Returns `[batch, num_fields, dim]`.
/// Gradients reach only the looked-up rows and accumulate over repeats.
pub fn embed_batch<T: Scalar>(tape: &mut Tape<T>, tables: &[Var], indices: &[u32]) -> Var {
    let num_fields = tables.len();
    assert!(num_fields > 0 && indices.len() % num_fields == 0, "index buffer does not match field count");
    let batch = indices.len() / num_fields;
    let dim = tape.shape(tables[0])[1];
    let per_field: Vec<Var> = tables
        .iter()
        .enumerate()
        .map(|(f, &table)| {
            assert_eq!(tape.shape(table)[1], dim, "embedding tables must share a dimension");
            let column: Vec<u32> = indices.iter().skip(f).step_by(num_fields).copied().collect();
            tape.gather(table, &column)
        })
        .collect();
    let flat = tape.concat(&per_field);
    tape.reshape(flat, &[batch, num_fields, dim])
}
