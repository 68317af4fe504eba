fn main() {
    println!("mtda");
}
