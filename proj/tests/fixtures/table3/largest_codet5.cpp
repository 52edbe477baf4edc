#include <iostream>
using namespace std;
int main (){
int n1, n2, n3;
cout << "enter three numbers" << endl;
cin >> n1 >> n2 >> n3 ;
if( n1 >= n2 && n1 >= n3)
cout << "largest is" << n1 << endl;
else if( n2 >= n1 && n2 >= n3)
cout << "largest is" << n2 << endl;
else
cout << "largest is" << n3 << endl;
}
